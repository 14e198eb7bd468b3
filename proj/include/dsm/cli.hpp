#pragma once

namespace dsm {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitConfig = 2;

/// Entry point of the dsmlab command-line tool.
int run_cli(int argc, const char* const* argv);

}  // namespace dsm
