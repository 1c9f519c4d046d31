#pragma once

#include <string>
#include <vector>

namespace forgeloc::cli {

// Entry point shared by the binary and the tests. `args` excludes the
// program name. Exit codes: 0 success, 2 usage/config, 3 data, 4 missing
// artifact, 5 internal.
int run(const std::vector<std::string>& args);

}  // namespace forgeloc::cli
