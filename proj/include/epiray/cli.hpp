#pragma once

#include <string>
#include <vector>

namespace epiray::cli {

/// Runs one CLI invocation (without argv[0]). Returns the process exit
/// code: 0 success, 1 runtime failure, 2 usage or validation error.
int run(const std::vector<std::string>& args);

}  // namespace epiray::cli
