#pragma once

#include "pdcycon/error.hpp"

namespace pdcycon::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitIo = 3;
inline constexpr int kExitNumeric = 4;

int exit_code_for(ErrorCode code);

/// Entry point of the `pdcycon` tool (synth | preprocess | train | eval | predict).
int run(int argc, char** argv);

}  // namespace pdcycon::cli
