#pragma once

#include "hpcrun/common/Error.hpp"

namespace hpcrun::runtime {

/// Exit statuses of `run` when the runtime itself fails. Anything else is the
/// container process's own status (128+N when it was killed by signal N).
namespace exitcode {
inline constexpr int usage = 2;
inline constexpr int notExecutable = 126;
inline constexpr int notFound = 127;
inline constexpr int internal = 200;
inline constexpr int config = 201;
inline constexpr int imageNotFound = 202;
inline constexpr int imageNotReady = 203;
inline constexpr int corruptImage = 204;
inline constexpr int planInvalid = 205;
inline constexpr int mountFailed = 206;
inline constexpr int isolationFailed = 207;
inline constexpr int dropFailed = 208;
inline constexpr int gpuFailed = 209;
inline constexpr int mpiFailed = 210;
}

int exitCodeFor(ErrorCode code);

}
