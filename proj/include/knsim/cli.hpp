#pragma once

#include <iosfwd>

namespace knsim {

enum ExitCode : int {
    kExitOk = 0,
    kExitUsage = 2,
    kExitConfig = 3,
    kExitRuntime = 4,
};

/// Parses argv, runs one subcommand and returns its exit code. argv[0] is the program name.
int parse_and_dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace knsim
