#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace bm4dpc {

/// Exit codes of the command-line tool.
enum ExitCode : int { kExitOk = 0, kExitUsage = 2, kExitIo = 3, kExitNumerical = 4 };

/// Parses argv (argv[0] is the program name) and runs one subcommand. Diagnostics go to
/// `err`, reports and help to `out`.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
/// Same, with the arguments after the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace bm4dpc
