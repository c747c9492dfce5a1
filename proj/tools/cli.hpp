#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace svcca::cli {

/// Exit codes shared by every subcommand.
enum ExitCode : int { kOk = 0, kVerificationFailed = 1, kInputError = 2, kNumericalError = 3 };

/// Runs the command line `args` (without the program name). The summary
/// goes to `out`, diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace svcca::cli
