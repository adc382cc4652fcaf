#pragma once

#include <cstdio>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "hpcrun/common/Error.hpp"
#include "hpcrun/config/SiteConfig.hpp"
#include "hpcrun/imagefs/Pack.hpp"
#include "hpcrun/runtime/ContainerRoot.hpp"
#include "hpcrun/runtime/Environment.hpp"
#include "hpcrun/runtime/LaunchSpec.hpp"
#include "hpcrun/runtime/MountPlan.hpp"
#include "hpcrun/runtime/StageTrace.hpp"

namespace hpcrun::runtime {

/// Makes a launch fail on purpose at a stage boundary (testing aid). With
/// `mountEntry` set the failure hits that plan index instead (0 is the image
/// root, mounted during PREPARE).
struct FaultInjection {
    std::optional<Stage> stage;
    std::optional<size_t> mountEntry;
};

/// Parses "STAGE" or "MOUNT:<index>". Throws Error(ValidationError).
FaultInjection parseFault(const std::string& text);

struct LaunchOptions {
    FaultInjection fault;
    /// Trace records are streamed here as they happen when set.
    std::FILE* traceFile = nullptr;
};

struct LaunchResult {
    int exitStatus = 0;
    /// Set when the runtime (not the container process) failed.
    std::optional<ErrorCode> error;
    std::string message;
    StageTrace trace;
    MountPlan plan;
    ContainerEnv env;
    std::vector<std::string> argv;
    std::vector<std::string> warnings;
    bool gpuEnabled = false;
    bool cleanupIncomplete = false;
    /// Kept when cleanup did not finish so the caller can call cleanup() again.
    std::unique_ptr<ContainerRoot> pendingCleanup;
};

/// Drives one container launch through PREPARE, MOUNT, CHROOT,
/// DROP_PRIVILEGES, EXPORT_ENV, EXEC and CLEANUP. PREPARE moves the calling
/// process into a private mount namespace, so the caller must be single-threaded.
class Runtime {
public:
    explicit Runtime(config::SiteConfig site);

    LaunchResult launch(const LaunchSpec& spec, const imagefs::PackedImage& image,
                        const LaunchOptions& options = {});

private:
    config::SiteConfig site_;
};

/// argv to execute: the spec's argv, or the image's entrypoint followed by cmd.
std::vector<std::string> resolveArgv(const LaunchSpec& spec, const imagefs::ImageConfig& config);

}
