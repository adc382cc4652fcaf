#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include "hpcrun/imagefs/Pack.hpp"
#include "hpcrun/runtime/MountEntry.hpp"

namespace hpcrun::runtime {

namespace fs = std::filesystem;

/// A launch's private directory `<work_dir>/launch-<id>` holding the container
/// root. The root stays writable until seal() so grafts can get mount points.
class ContainerRoot {
public:
    /// Creates `<workDir>/launch-<random>/root`.
    explicit ContainerRoot(const fs::path& workDir);
    ~ContainerRoot();
    ContainerRoot(const ContainerRoot&) = delete;
    ContainerRoot& operator=(const ContainerRoot&) = delete;

    const fs::path& launchDir() const { return launchDir_; }
    const fs::path& root() const { return root_; }
    const std::string& id() const { return id_; }

    /// Throws Error(CorruptPack) or Error(MountFailed).
    void mountImage(const imagefs::PackedImage& image);
    bool imageFallback() const { return image_.fallback(); }

    /// Bind mounts entry.source at entry.target inside the root, creating the
    /// mount point when the image lacks it. Throws Error(MountFailed).
    void graft(const MountEntry& entry);
    size_t graftCount() const { return grafts_.size(); }

    /// Makes the image root read-only, nosuid and nodev.
    void seal();

    /// Unmounts grafts in reverse order, releases the image and removes the
    /// launch directory. Idempotent. `stopAfter` limits how many grafts are
    /// unmounted in this call (fault injection); when work remains it throws
    /// Error(CleanupIncomplete) and a later call resumes.
    void cleanup(std::optional<size_t> stopAfter = std::nullopt);
    bool cleanedUp() const { return cleaned_; }

private:
    std::string id_;
    fs::path launchDir_;
    fs::path root_;
    imagefs::MountedImage image_;
    std::vector<fs::path> grafts_;
    bool cleaned_ = false;
};

}
