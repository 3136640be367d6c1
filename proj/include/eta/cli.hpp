#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace eta::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumeric = 4;

/// Runs one command line (without the program name). Diagnostics go to
/// `err`, tables and help to `out`. Returns the process exit code.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace eta::cli
