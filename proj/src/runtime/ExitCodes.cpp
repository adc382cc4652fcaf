#include "hpcrun/runtime/ExitCodes.hpp"

namespace hpcrun::runtime {

int exitCodeFor(ErrorCode code) {
    switch (code) {
    case ErrorCode::ParseError:
    case ErrorCode::ValidationError:
    case ErrorCode::MissingRequired:
    case ErrorCode::CatalogCorrupt:
        return exitcode::config;
    case ErrorCode::MalformedReference:
    case ErrorCode::ImageNotFound:
        return exitcode::imageNotFound;
    case ErrorCode::ImageNotReady:
        return exitcode::imageNotReady;
    case ErrorCode::CorruptPack:
        return exitcode::corruptImage;
    case ErrorCode::TargetConflict:
    case ErrorCode::TargetEscape:
        return exitcode::planInvalid;
    case ErrorCode::MountFailed:
    case ErrorCode::MountDenied:
    case ErrorCode::StorageFull:
        return exitcode::mountFailed;
    case ErrorCode::IsolationFailed:
        return exitcode::isolationFailed;
    case ErrorCode::DropFailed:
        return exitcode::dropFailed;
    case ErrorCode::ExecNotFound:
        return exitcode::notFound;
    case ErrorCode::MissingDriverLibrary:
    case ErrorCode::MissingDeviceFile:
        return exitcode::gpuFailed;
    case ErrorCode::UnparseableAbi:
    case ErrorCode::BaseNameMismatch:
    case ErrorCode::AbiIncompatible:
    case ErrorCode::NoContainerMpi:
        return exitcode::mpiFailed;
    default:
        return exitcode::internal;
    }
}

}
