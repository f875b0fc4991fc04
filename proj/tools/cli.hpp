#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace molgnn::cli {

inline constexpr const char* kToolkitVersion = "1.0.0";

/// Runs one command line (without the program name). Returns the process
/// exit code: 0 success, 1 module error, 2 invalid configuration or flags.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace molgnn::cli
