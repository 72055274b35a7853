#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace pointbert::cli {

enum ExitCode : int {
    exit_ok = 0,
    exit_failure = 1,
    exit_bad_config = 2,
    exit_missing_input = 3,
    exit_numerics = 4,
};

/// Runs one command. `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

std::string version_stamp();

}  // namespace pointbert::cli
