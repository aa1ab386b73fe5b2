#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace vitens::cli {

/// Exit codes: 0 success, 1 runtime failure, 2 usage error.
inline constexpr int kOk = 0;
inline constexpr int kFailure = 1;
inline constexpr int kUsage = 2;

/// `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_cli(int argc, char** argv);

}  // namespace vitens::cli
