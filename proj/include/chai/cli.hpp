#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace chai::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

// Entry point of the `chai` tool. Subcommands: init, corpus, calibrate,
// generate, bench, analyze, compare.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace chai::cli
