#pragma once

#include <string>
#include <vector>

namespace s2i::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUser = 1;
inline constexpr int kExitNumeric = 2;

// Entry point of the s2i tool; returns the process exit code.
int run(const std::vector<std::string>& args);
int run(int argc, char** argv);

} // namespace s2i::cli
