#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "hpcrun/imagefs/Flatten.hpp"

namespace hpcrun::imagefs {

namespace fs = std::filesystem;

enum class PackFormat { Squash, Archive };

std::string_view packFormatName(PackFormat format);
std::optional<PackFormat> packFormatFromName(std::string_view name);

/// Which format pack() should produce. Auto picks Squash when mksquashfs is on PATH.
enum class PackPreference { Auto, Squash, Archive };

struct PackedImage {
    fs::path path;
    PackFormat format = PackFormat::Archive;
    std::string imageId;
    ImageConfig config;
};

/// Writes `<store>/images/<imageId>.pack` (temp file then rename).
/// The archive format is a ustar stream in byte-lexicographic path order with
/// zeroed timestamps and ownership, so identical trees give identical bytes.
PackedImage pack(const FlattenedImage& image, const fs::path& store,
                 PackPreference preference = PackPreference::Auto);

/// Streams the canonical archive of `root` to `out`.
void writeCanonicalArchive(const Tree& root, std::ostream& out);

bool squashPackerAvailable();

/// Extracts a canonical archive into `target` (must exist) and returns the id
/// recomputed from what was extracted. Symlinks are created, never followed.
/// Throws Error(CorruptPack) on any structural problem.
std::string extractArchive(const fs::path& archive, const fs::path& target, const ImageConfig& config);

/// Recomputes the image id of a canonical archive without extracting it.
/// Throws Error(CorruptPack).
std::string computeArchiveId(const fs::path& archive, const ImageConfig& config);

/// Writes a tree to disk below `target` (used for squash packing and tests).
void materializeTree(const Tree& root, const fs::path& target);

struct MountOptions {
    /// Remount read-only (nosuid, nodev) right away. The runtime defers this
    /// with seal() until grafts have their mount points.
    bool sealReadOnly = true;
    /// Scratch space for squash lower/upper directories.
    fs::path scratch;
};

/// A packed image made visible at a directory. Released on destruction.
class MountedImage {
public:
    MountedImage() = default;
    ~MountedImage();
    MountedImage(MountedImage&& other) noexcept;
    MountedImage& operator=(MountedImage&& other) noexcept;
    MountedImage(const MountedImage&) = delete;
    MountedImage& operator=(const MountedImage&) = delete;

    const fs::path& root() const { return root_; }
    /// True when mounting was denied and the content was only extracted
    /// (not protected read-only).
    bool fallback() const { return fallback_; }
    bool sealed() const { return sealed_; }
    bool active() const { return active_; }

    void seal();
    /// Unmounts and removes extracted content; leaves `root` as an empty directory. Idempotent.
    void release();

private:
    friend MountedImage mountPacked(const PackedImage&, const fs::path&, const MountOptions&);

    fs::path root_;
    fs::path scratch_;
    std::vector<fs::path> mounts_; // innermost last
    bool fallback_ = false;
    bool sealed_ = false;
    bool active_ = false;
    bool removeContent_ = false;
};

/// Makes `image` readable at the empty directory `target`.
/// Archive packs are extracted and verified against the image id, then bind
/// mounted onto themselves; when mounting is not permitted the extracted tree is
/// used as is (fallback()). Throws Error(CorruptPack) for damaged packs.
MountedImage mountPacked(const PackedImage& image, const fs::path& target, const MountOptions& options = {});

}
