#pragma once

#include <iosfwd>

namespace advpatch {

// Stable exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitPartial = 2;
inline constexpr int kExitNumerical = 3;

/// Entry point for `advpatch label | train | eval | export | scenes`.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace advpatch
