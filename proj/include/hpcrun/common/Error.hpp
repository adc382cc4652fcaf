#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace hpcrun {

enum class ErrorCode {
    // image-gateway
    MalformedReference,
    RegistryUnreachable,
    ManifestNotFound,
    DigestMismatch,
    StorageFull,
    UnreadableArchive,
    MissingManifest,
    CatalogCorrupt,
    ImageNotFound,
    ImageNotReady,
    // imagefs
    PathEscape,
    PackerUnavailable,
    MountDenied,
    CorruptPack,
    // runtime-core
    TargetConflict,
    TargetEscape,
    MountFailed,
    IsolationFailed,
    DropFailed,
    ExecNotFound,
    CleanupIncomplete,
    // gpu-injector
    MissingDriverLibrary,
    MissingDeviceFile,
    // mpi-injector
    UnparseableAbi,
    BaseNameMismatch,
    AbiIncompatible,
    NoContainerMpi,
    // site-config
    ParseError,
    ValidationError,
    MissingRequired,
    // catch-all for unexpected system failures
    Internal,
};

std::string_view errorCodeName(ErrorCode code);

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(message)
        , code_(code)
    {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

/// Throws Error(Internal) carrying strerror(errnum), or StorageFull when
/// errnum denotes a full or read-only destination.
[[noreturn]] void throwSystemError(const std::string& what, int errnum);

bool isStorageErrno(int errnum) noexcept;

}
