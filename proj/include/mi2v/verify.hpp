#pragma once

#include <string>
#include <vector>

namespace mi2v {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct VerifyReport {
  std::vector<CheckResult> checks;

  bool all_passed() const;
  // Deterministic: no timings or host details.
  std::string to_json() const;
};

// Runs the invariant checks of every module. Exceptions inside a check count as
// a failure of that check only.
VerifyReport run_verify_suite();

// Largest normwise relative error between the streaming and quadratic linear
// attention forms over `cases` seeded shapes (S in 1..512, h in {1, 4},
// d in {8, 32}).
double dual_form_max_error(int cases, unsigned long long seed = 0);

inline constexpr const char* kDualFormCheck = "attention.dual_form_equivalence";

}  // namespace mi2v
