#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace hpcrun::runtime {

enum class MountKind { ImageRoot, BindFile, BindDir, Device };

/// Which part of the launch asked for a graft. Used for plan ordering and reporting.
enum class MountOrigin {
    Image,
    Site,
    GpuDevice,
    GpuLibrary,
    GpuBinary,
    MpiFrontend,
    MpiDependency,
    MpiConfig,
    User,
};

struct MountEntry {
    /// Host path (or pack path for the image root).
    std::string source;
    /// Absolute, normalized container path; "/" for the image root.
    std::string target;
    MountKind kind = MountKind::BindFile;
    bool writable = false;
    MountOrigin origin = MountOrigin::Site;

    bool operator==(const MountEntry&) const = default;
};

inline std::string_view mountKindName(MountKind kind) {
    switch (kind) {
    case MountKind::ImageRoot:
        return "IMAGE_ROOT";
    case MountKind::BindFile:
        return "BIND_FILE";
    case MountKind::BindDir:
        return "BIND_DIR";
    case MountKind::Device:
        return "DEVICE";
    }
    return "?";
}

inline std::string_view mountOriginName(MountOrigin origin) {
    switch (origin) {
    case MountOrigin::Image:
        return "image";
    case MountOrigin::Site:
        return "site";
    case MountOrigin::GpuDevice:
        return "gpu-device";
    case MountOrigin::GpuLibrary:
        return "gpu-library";
    case MountOrigin::GpuBinary:
        return "gpu-binary";
    case MountOrigin::MpiFrontend:
        return "mpi-frontend";
    case MountOrigin::MpiDependency:
        return "mpi-dependency";
    case MountOrigin::MpiConfig:
        return "mpi-config";
    case MountOrigin::User:
        return "user";
    }
    return "?";
}

/// An injector-mandated environment change (tier 4 of the merge).
struct EnvAdjustment {
    enum class Mode { Set, PrependPath };

    std::string key;
    std::string value;
    Mode mode = Mode::Set;

    bool operator==(const EnvAdjustment&) const = default;
};

}
