#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace hpcrun::config {

namespace fs = std::filesystem;

inline constexpr const char* defaultConfigPath = "/etc/hpcrun/config";
inline constexpr const char* configPathVariable = "HPCRUN_CONFIG";
inline constexpr const char* defaultRegistry = "registry-1.docker.io";

struct SiteMount {
    std::string hostPath;
    std::string containerPath;
    bool writable = false;

    bool operator==(const SiteMount&) const = default;
};

/// Administrator-configured host MPI installation ([mpi] section).
struct HostMpiSettings {
    /// base name (libmpi, libmpicxx, libmpifort) -> host library path
    std::map<std::string, std::string> frontends;
    /// optional explicit "current:revision:age" per base name
    std::map<std::string, std::string> abiOverrides;
    std::vector<std::string> dependencies;
    std::vector<std::string> configPaths;

    bool operator==(const HostMpiSettings&) const = default;
};

struct GpuSettings {
    std::optional<std::string> deviceDir;
    std::vector<std::string> libraryDirs;
    std::vector<std::string> smiDirs;
    /// When set, probing is bypassed and the inventory is read from this file.
    std::optional<std::string> mockInventory;

    bool operator==(const GpuSettings&) const = default;
};

struct SiteConfig {
    // [gateway]
    std::string imageStore;
    std::string defaultRegistry = config::defaultRegistry;
    /// Base URL used instead of https://<registry> (fixture registries, mirrors).
    std::optional<std::string> registryUrl;
    std::string packFormat = "auto";

    // [runtime]
    std::string workDir = "/var/tmp/hpcrun";
    std::vector<SiteMount> siteMounts;
    std::vector<std::string> envPassthrough;
    std::vector<std::pair<std::string, std::string>> envForce;

    // [gpu]
    GpuSettings gpu;

    // [mpi]
    std::optional<HostMpiSettings> mpi;

    bool operator==(const SiteConfig&) const = default;
};

/// Parses and validates a configuration document. `origin` names the source in errors.
SiteConfig parseConfig(const std::string& text, const std::string& origin = "<config>");

SiteConfig loadConfig(const fs::path& path);

/// $HPCRUN_CONFIG when set, otherwise /etc/hpcrun/config.
fs::path configPathFromEnvironment();

/// Renders a document that parseConfig() reads back to an equal SiteConfig.
std::string renderConfig(const SiteConfig& config);

}
