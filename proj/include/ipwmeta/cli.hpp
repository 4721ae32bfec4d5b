#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace ipwmeta::cli {

enum ExitCode : int {
    kExitOk = 0,
    kExitUsage = 2,
    kExitData = 3,
    kExitNumerical = 4,
};

// Entry point shared by the executable and the tests. `args` excludes the
// program name. Results go to `out`; diagnostics, progress and
// machine-readable errors go to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ipwmeta::cli
