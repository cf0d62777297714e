#pragma once

namespace mapo::cli {

// Exit codes are a stable scripting contract:
//   0 success, 2 config error, 3 runtime abort (non-finite state),
//   4 I/O or integrity failure.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitAbort = 3;
inline constexpr int kExitIo = 4;

int run(int argc, const char* const* argv);

}  // namespace mapo::cli
