#pragma once

#include <stdexcept>
#include <string>

namespace mi2v {

// Every contract violation in the library surfaces as an Error. The message
// carries the operation name so reports can point at the failing call.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

[[noreturn]] inline void fail(const std::string& where, const std::string& what) {
  throw Error(where + ": " + what);
}

inline void require(bool cond, const std::string& where, const std::string& what) {
  if (!cond) fail(where, what);
}

}  // namespace mi2v
