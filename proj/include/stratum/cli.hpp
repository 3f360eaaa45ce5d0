#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace stratum {

inline constexpr const char* kVersion = "0.1.0";

/// Exit codes shared by every subcommand.
enum ExitCode : int {
    kExitOk = 0,
    kExitFailure = 1,  // internal error or failed self-check
    kExitUsage = 2,    // bad flags or unreadable/invalid input
    kExitDivergence = 3,
    kExitTraining = 4,
};

/// Runs the command-line tool. `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace stratum
