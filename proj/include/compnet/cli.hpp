#pragma once

#include <iosfwd>

namespace compnet::cli {

/// Exit codes of the command-line tool.
enum ExitCode : int {
  kSuccess = 0,
  kUsageError = 2,
  kDiverged = 3,
  kGeometryMismatch = 4,
};

/// Entry point for `compnet synth|train|eval|localize`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace compnet::cli
