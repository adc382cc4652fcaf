#include "hpcrun/common/Error.hpp"

#include <cerrno>
#include <cstring>

namespace hpcrun {

std::string_view errorCodeName(ErrorCode code) {
    switch (code) {
    case ErrorCode::MalformedReference: return "MALFORMED_REFERENCE";
    case ErrorCode::RegistryUnreachable: return "REGISTRY_UNREACHABLE";
    case ErrorCode::ManifestNotFound: return "MANIFEST_NOT_FOUND";
    case ErrorCode::DigestMismatch: return "DIGEST_MISMATCH";
    case ErrorCode::StorageFull: return "STORAGE_FULL";
    case ErrorCode::UnreadableArchive: return "UNREADABLE_ARCHIVE";
    case ErrorCode::MissingManifest: return "MISSING_MANIFEST";
    case ErrorCode::CatalogCorrupt: return "CATALOG_CORRUPT";
    case ErrorCode::ImageNotFound: return "IMAGE_NOT_FOUND";
    case ErrorCode::ImageNotReady: return "IMAGE_NOT_READY";
    case ErrorCode::PathEscape: return "PATH_ESCAPE";
    case ErrorCode::PackerUnavailable: return "PACKER_UNAVAILABLE";
    case ErrorCode::MountDenied: return "MOUNT_DENIED";
    case ErrorCode::CorruptPack: return "CORRUPT_PACK";
    case ErrorCode::TargetConflict: return "TARGET_CONFLICT";
    case ErrorCode::TargetEscape: return "TARGET_ESCAPE";
    case ErrorCode::MountFailed: return "MOUNT_FAILED";
    case ErrorCode::IsolationFailed: return "ISOLATION_FAILED";
    case ErrorCode::DropFailed: return "DROP_FAILED";
    case ErrorCode::ExecNotFound: return "EXEC_NOT_FOUND";
    case ErrorCode::CleanupIncomplete: return "CLEANUP_INCOMPLETE";
    case ErrorCode::MissingDriverLibrary: return "MISSING_DRIVER_LIBRARY";
    case ErrorCode::MissingDeviceFile: return "MISSING_DEVICE_FILE";
    case ErrorCode::UnparseableAbi: return "UNPARSEABLE_ABI";
    case ErrorCode::BaseNameMismatch: return "BASE_NAME_MISMATCH";
    case ErrorCode::AbiIncompatible: return "ABI_INCOMPATIBLE";
    case ErrorCode::NoContainerMpi: return "NO_CONTAINER_MPI";
    case ErrorCode::ParseError: return "PARSE_ERROR";
    case ErrorCode::ValidationError: return "VALIDATION_ERROR";
    case ErrorCode::MissingRequired: return "MISSING_REQUIRED";
    case ErrorCode::Internal: return "INTERNAL";
    }
    return "UNKNOWN";
}

bool isStorageErrno(int errnum) noexcept {
    return errnum == ENOSPC || errnum == EDQUOT || errnum == EROFS || errnum == EFBIG;
}

void throwSystemError(const std::string& what, int errnum) {
    auto message = what + ": " + std::strerror(errnum);
    if (isStorageErrno(errnum)) {
        throw Error(ErrorCode::StorageFull, message);
    }
    throw Error(ErrorCode::Internal, message);
}

}
