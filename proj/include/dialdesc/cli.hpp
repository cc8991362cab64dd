#pragma once

#include <string>
#include <vector>

namespace dialdesc {

// Command line entry point; args exclude the program name. Exit codes:
// 0 success, 2 configuration error, 3 data error, 4 numeric failure.
int run(const std::vector<std::string>& args);

}  // namespace dialdesc
