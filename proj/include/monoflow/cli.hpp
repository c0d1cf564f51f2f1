#pragma once

#include <iosfwd>

namespace monoflow {

/// Exit codes of the command-line tool.
enum ExitCode : int {
  kExitOk = 0,
  kExitConfig = 2,
  kExitNumeric = 3,
  kExitMismatch = 4,
  kExitVerify = 5,
};

/// Entry point behind the `monoflow` executable. Diagnostics go to `err`,
/// human-readable summaries to `out`.
int run_cli(int argc, char** argv, std::ostream& out, std::ostream& err);

}  // namespace monoflow
