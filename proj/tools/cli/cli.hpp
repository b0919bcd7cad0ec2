#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace vod::cli {

// Process exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitInternal = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitIo = 3;
inline constexpr int kExitBackend = 4;

// Runs the `vod` command line. args[0] is the program name. Reports go to
// `out`, diagnostics to `err`; returns the exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace vod::cli
