#pragma once

#include <iosfwd>

namespace agnet::cli {

/// Exit codes shared by every command.
enum ExitCode : int {
    kOk = 0,
    kUsage = 1,
    kData = 2,
    kNumerical = 3,
};

/// Parses argv and runs one subcommand. All output goes to `out` / `err`.
int run(int argc, const char *const *argv, std::ostream &out, std::ostream &err);

} // namespace agnet::cli
