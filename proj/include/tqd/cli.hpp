#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace tqd {

/// Process exit codes of the command-line tool.
enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 1,
  kExitConfig = 2,
  kExitData = 3,
  kExitNumeric = 4,
  kExitInternal = 5,
};

/// Runs one CLI invocation. `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out,
            std::ostream& err);

}  // namespace tqd
