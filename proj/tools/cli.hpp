#pragma once

#include <string>
#include <vector>

namespace finta::cli {

/// Runs the tool on `args` (program name excluded) and returns the exit code:
/// 0 success, 1 user or input error, 2 internal error. Errors are reported on
/// stderr as a single `error: <code>: <message>` line.
int run(const std::vector<std::string>& args);

}  // namespace finta::cli
