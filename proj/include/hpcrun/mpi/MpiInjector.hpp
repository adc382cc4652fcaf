#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "hpcrun/config/SiteConfig.hpp"
#include "hpcrun/runtime/MountEntry.hpp"

namespace hpcrun::mpi {

namespace fs = std::filesystem;

inline constexpr std::array<const char*, 3> frontendNames = {"libmpi", "libmpicxx", "libmpifort"};
inline constexpr const char* containerDependencyDir = "/opt/hostmpi/lib";

/// libtool current:revision:age. The library provides interfaces [current-age, current].
struct AbiVersion {
    unsigned current = 0;
    unsigned revision = 0;
    unsigned age = 0;
    /// "libmpi", ...; empty for a bare triple
    std::string base;

    unsigned lowest() const { return current - age; }
    std::string triple() const;
    bool operator==(const AbiVersion&) const = default;
};

/// Accepts "c:r:a" or a libtool-named file "lib<base>.so.<current-age>[.<age>[.<revision>]]".
/// Throws Error(UnparseableAbi).
AbiVersion parseAbiVersion(std::string_view text);

/// Version of a shared object on disk: the soname fixes the major number, the
/// real file name (after symlinks) supplies age and revision when it agrees
/// with the soname. `root` confines symlink resolution for container files.
AbiVersion libraryAbiVersion(const fs::path& root, const std::string& containerPath);

struct AbiVerdict {
    bool compatible = false;
    /// Set when incompatible: "mpi-abi: container <base> interface <N> not provided by host range [<lo>,<hi>]"
    std::string diagnostic;
};

/// Compatible iff host.current-host.age <= container.current <= host.current.
/// Revision is ignored. Throws Error(BaseNameMismatch) when both base names are
/// set and differ.
AbiVerdict checkAbiCompatibility(const AbiVersion& container, const AbiVersion& host);

struct HostFrontend {
    std::string path;
    AbiVersion version;
};

struct HostMpiConfig {
    std::map<std::string, HostFrontend> frontends;
    std::vector<std::string> dependencies;
    std::vector<std::string> configPaths;
};

/// Throws Error(UnparseableAbi) when a frontend's version can be derived
/// neither from its override nor from the library itself.
HostMpiConfig hostMpiConfigFrom(const config::HostMpiSettings& settings);

struct FoundLibrary {
    /// Path as the loader finds it inside the container.
    std::string containerPath;
    AbiVersion version;
};

struct ContainerMpiScan {
    std::map<std::string, FoundLibrary> found;
    std::vector<std::string> scanRoots;
    std::vector<std::string> warnings;
};

inline const std::vector<std::string> standardLibraryDirs = {
    "/lib", "/lib64", "/usr/lib", "/usr/lib64", "/lib/x86_64-linux-gnu", "/usr/lib/x86_64-linux-gnu",
    "/usr/local/lib", "/usr/local/lib64",
};

/// Searches the image's LD_LIBRARY_PATH entries, then the standard loader
/// directories, below `root` for the three frontends. The first directory on
/// the search path wins; other copies are reported as warnings.
ContainerMpiScan scanContainerMpi(const fs::path& root, const std::string& imageLibraryPath);

struct MpiInjectionPlan {
    std::vector<runtime::MountEntry> libraryOvermounts;
    std::vector<runtime::MountEntry> dependencyMounts;
    std::vector<runtime::MountEntry> configMounts;
    std::vector<runtime::EnvAdjustment> env;
    std::vector<std::string> warnings;
};

/// All found frontends are swapped or the plan fails: Error(NoContainerMpi)
/// when the image has no libmpi, Error(AbiIncompatible) carrying the mpi-abi
/// diagnostic otherwise.
MpiInjectionPlan planMpiInjection(const ContainerMpiScan& scan, const HostMpiConfig& host);

}
