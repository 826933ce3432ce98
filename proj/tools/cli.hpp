// Command-line front end: train, evaluate and report.

#pragma once

#include <iosfwd>

namespace imarl::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;    ///< bad flags, bad config, missing inputs
inline constexpr int kExitRuntime = 2;  ///< failures while running (I/O, NaN loss)

/// Parses argv and runs the selected command. Never throws.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace imarl::cli
