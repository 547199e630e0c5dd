#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace karma::cli {

enum ExitCode : int {
  kOk = 0,
  kUsage = 1,
  kDataError = 2,
  kNumericAbort = 3,
};

// Runs one subcommand. `args` excludes the program name. Human-readable
// output goes to `out`, diagnostics to `err`.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace karma::cli
