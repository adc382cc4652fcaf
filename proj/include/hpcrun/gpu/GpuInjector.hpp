#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "hpcrun/config/SiteConfig.hpp"
#include "hpcrun/runtime/MountEntry.hpp"

namespace hpcrun::gpu {

namespace fs = std::filesystem;

inline constexpr std::array<const char*, 7> driverLibraries = {
    "cuda",         "nvidia-compiler", "nvidia-ptxjitcompiler", "nvidia-encode",
    "nvidia-ml",    "nvidia-fatbinaryloader", "nvidia-opencl",
};

inline constexpr const char* visibleDevicesVariable = "CUDA_VISIBLE_DEVICES";
inline constexpr const char* containerLibraryDir = "/opt/hostgpu/lib";
inline constexpr const char* containerBinaryDir = "/opt/hostgpu/bin";

struct DeviceSelector {
    enum class Kind { Index, Uuid };

    Kind kind = Kind::Index;
    unsigned index = 0;
    std::string uuid;

    bool operator==(const DeviceSelector&) const = default;
};

struct GpuVisibilitySpec {
    std::string raw;
    std::vector<DeviceSelector> entries;

    bool operator==(const GpuVisibilitySpec&) const = default;
};

/// Grammar check only: comma-separated, non-empty, duplicate-free tokens, each a
/// non-negative decimal index or a `GPU-` identifier. nullopt when invalid.
std::optional<GpuVisibilitySpec> parseVisibleDevices(std::string_view raw);

struct GpuDevice {
    unsigned index = 0;
    std::string uuid;
    std::string path;

    bool operator==(const GpuDevice&) const = default;
};

struct HostGpuInventory {
    std::vector<GpuDevice> devices;
    /// library name (e.g. "nvidia-ml") -> host path
    std::map<std::string, std::string> libraries;
    std::optional<std::string> smi;

    bool operator==(const HostGpuInventory&) const = default;
};

struct TriggerDecision {
    bool enabled = false;
    std::optional<GpuVisibilitySpec> spec;
    /// Why support stayed disabled; empty when enabled.
    std::string reason;
};

/// Never fails: anything but a valid, fully resolvable CUDA_VISIBLE_DEVICES
/// yields a disabled decision.
TriggerDecision detectTrigger(const std::map<std::string, std::string>& hostEnv,
                              const std::optional<HostGpuInventory>& inventory);

struct GpuInjectionPlan {
    std::vector<runtime::MountEntry> deviceMounts;
    std::vector<runtime::MountEntry> libraryMounts;
    std::vector<runtime::MountEntry> binaryMounts;
    /// host index -> container index, in selection order
    std::vector<std::pair<unsigned, unsigned>> renumber;
    std::vector<runtime::EnvAdjustment> env;

    bool operator==(const GpuInjectionPlan&) const = default;
};

/// Throws Error(MissingDriverLibrary) naming the library, Error(MissingDeviceFile)
/// naming the device index.
GpuInjectionPlan planGpuInjection(const GpuVisibilitySpec& spec, const HostGpuInventory& inventory);

/// Reads the mock inventory document:
/// {"devices": [{"index": 0, "uuid": "GPU-..", "path": "/dev/nvidia0"}],
///  "libraries": {"cuda": "/usr/lib64/libcuda.so.1", ...}, "smi": "/usr/bin/nvidia-smi"}
/// Throws Error(ValidationError).
HostGpuInventory loadMockInventory(const fs::path& file);

/// Mock inventory when configured, otherwise a filesystem probe of the
/// configured device, library and binary directories. Never throws for a
/// missing or empty probe root.
HostGpuInventory probeHostInventory(const config::GpuSettings& settings);

}
