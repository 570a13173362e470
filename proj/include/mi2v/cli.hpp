#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace mi2v {

// Exit codes of cli_dispatch.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailed = 1;
inline constexpr int kExitUsage = 2;

// Runs one subcommand. `args` excludes the program name. Reports go to `out`,
// diagnostics to `err`; artifacts are written to the paths given by flags.
//
//   verify       [--out report.json] [--config PATH]
//   bench-attn   [--out table.csv] [--strategy S] [--lengths 256,512] [--reps N] [--seed U64]
//   generate     --out latent.mi2v [--spec WxHxT] [--steps N] [--motion F] [--seed U64]
//                [--mode velocity|noise] [--reference ref.mi2v] [--weights w.mi2v]
//                [--preview-prefix PREFIX] [--strategy S]
//   distill-toy  [--out metrics.json] [--iterations N] [--losses reg,adv,dm] [--seed U64]
//   params       [--preset micro|desk|full]
//
// Every subcommand accepts --config PATH (a RunConfig JSON document).
int cli_dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mi2v
