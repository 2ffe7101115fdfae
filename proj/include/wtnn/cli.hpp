#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace wtnn {

/// Exit codes of the command-line interface.
enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitData = 2, kExitNumerical = 3 };

/// Runs one command. `args` starts with the program name, like argv.
/// Subcommands: arch, simulate, train, evaluate, predict, rank.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace wtnn
