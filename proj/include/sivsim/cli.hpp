#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace sivsim {

/// Exit codes of the command-line tool.
enum ExitCode : int {
  kExitOk = 0,
  kExitConfig = 2,
  kExitRuntime = 3,
  kExitNotConverged = 4,
};

/// Runs one CLI invocation; args[0] is the program name. Diagnostics go to
/// `err` as one JSON object per line.
int cli_dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

int cli_dispatch(int argc, char** argv);

}  // namespace sivsim
