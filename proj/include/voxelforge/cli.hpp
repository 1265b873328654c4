#pragma once

#include <ostream>
#include <span>
#include <string>

namespace voxelforge::cli {

// exit codes
inline constexpr int kOk = 0;
inline constexpr int kUsage = 1;
inline constexpr int kDataError = 2;
inline constexpr int kRuntimeError = 3;

// Runs one subcommand (args exclude the program name). Results go to out,
// key=value log lines to err.
int run(std::span<const std::string> args, std::ostream& out, std::ostream& err);

}  // namespace voxelforge::cli
