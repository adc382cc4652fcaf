#include "hpcrun/imagefs/Pack.hpp"

#include <algorithm>
#include <array>
#include <cerrno>
#include <cstring>
#include <fstream>

#include <fcntl.h>
#include <sys/mount.h>
#include <sys/stat.h>
#include <unistd.h>

#include "hpcrun/common/Error.hpp"
#include "hpcrun/common/Filesystem.hpp"
#include "hpcrun/common/Mounts.hpp"
#include "hpcrun/common/Path.hpp"
#include "hpcrun/common/Process.hpp"
#include "hpcrun/imagefs/Tar.hpp"

namespace hpcrun::imagefs {

namespace {

[[noreturn]] void storeError(const std::string& what, int errnum) {
    if (errnum == EACCES || errnum == EPERM) {
        throw Error(ErrorCode::StorageFull, what + ": store is not writable");
    }
    throwSystemError(what, errnum);
}

void packArchive(const FlattenedImage& image, const fs::path& destination) {
    auto temp = destination;
    temp += ".tmp-" + fsutil::randomToken(8);
    {
        std::ofstream out(temp, std::ios::binary | std::ios::trunc);
        if (!out) {
            storeError("cannot create " + temp.string(), errno);
        }
        try {
            writeCanonicalArchive(image.root, out);
        } catch (...) {
            out.close();
            ::unlink(temp.c_str());
            throw;
        }
        out.flush();
        if (!out) {
            int saved = errno ? errno : ENOSPC;
            out.close();
            ::unlink(temp.c_str());
            storeError("cannot write " + temp.string(), saved);
        }
    }
    if (::rename(temp.c_str(), destination.c_str()) != 0) {
        int saved = errno;
        ::unlink(temp.c_str());
        storeError("cannot publish " + destination.string(), saved);
    }
}

void packSquash(const FlattenedImage& image, const fs::path& store, const fs::path& destination) {
    fsutil::TempDir staging(store / "tmp", "squash-");
    auto tree = staging.path() / "root";
    fs::create_directory(tree);
    materializeTree(image.root, tree);
    auto temp = destination;
    temp += ".tmp-" + fsutil::randomToken(8);
    int status = process::runQuiet({"mksquashfs", tree.string(), temp.string(), "-noappend", "-no-xattrs",
                                    "-all-root", "-mkfs-time", "0", "-all-time", "0", "-no-progress"});
    if (status != 0) {
        ::unlink(temp.c_str());
        throw Error(ErrorCode::StorageFull, "mksquashfs failed with status " + std::to_string(status));
    }
    if (::rename(temp.c_str(), destination.c_str()) != 0) {
        int saved = errno;
        ::unlink(temp.c_str());
        storeError("cannot publish " + destination.string(), saved);
    }
}

// Every ancestor between `root` and `path` must be a real directory.
void requireRealParents(const fs::path& root, const std::string& relative) {
    std::string parent = parentOf(relative);
    if (parent.empty()) {
        return;
    }
    struct stat st {};
    auto host = root / parent;
    if (::lstat(host.c_str(), &st) != 0 || !S_ISDIR(st.st_mode)) {
        throw Error(ErrorCode::CorruptPack, "pack member " + relative + " has no directory parent");
    }
}

}

std::string_view packFormatName(PackFormat format) {
    return format == PackFormat::Squash ? "squash" : "archive";
}

std::optional<PackFormat> packFormatFromName(std::string_view name) {
    if (name == "squash") {
        return PackFormat::Squash;
    }
    if (name == "archive") {
        return PackFormat::Archive;
    }
    return std::nullopt;
}

bool squashPackerAvailable() {
    return process::findOnPath("mksquashfs").has_value();
}

void writeCanonicalArchive(const Tree& root, std::ostream& out) {
    TarWriter writer(out);
    for (const auto& [path, node] : root) {
        switch (node.type) {
        case NodeType::Directory:
            writer.addDirectory(path, node.mode);
            break;
        case NodeType::Symlink:
            writer.addSymlink(path, node.linkTarget, 0777);
            break;
        case NodeType::Regular:
            if (node.content.isArchiveBacked()) {
                writer.addFileFrom(path, node.mode, node.content.archive(), node.content.offset(),
                                   node.content.size());
            } else {
                writer.addFile(path, node.mode, node.content.read());
            }
            break;
        }
    }
    writer.finish();
}

PackedImage pack(const FlattenedImage& image, const fs::path& store, PackPreference preference) {
    for (const auto& [path, node] : image.root) {
        if (isWhiteoutName(baseNameOf(path))) {
            throw Error(ErrorCode::Internal, "refusing to pack whiteout marker " + path);
        }
    }
    auto images = store / "images";
    std::error_code ec;
    fs::create_directories(images, ec);
    if (ec) {
        storeError("cannot create " + images.string(), ec.value());
    }

    auto format = PackFormat::Archive;
    if (preference == PackPreference::Squash || preference == PackPreference::Auto) {
        if (squashPackerAvailable()) {
            format = PackFormat::Squash;
        }
    }

    PackedImage packed;
    packed.imageId = image.imageId.empty() ? computeImageId(image.root, image.config) : image.imageId;
    packed.config = image.config;
    packed.format = format;
    packed.path = images / (packed.imageId + ".pack");
    if (format == PackFormat::Squash) {
        packSquash(image, store, packed.path);
    } else {
        packArchive(image, packed.path);
    }
    return packed;
}

std::string extractArchive(const fs::path& archive, const fs::path& target, const ImageConfig& config) {
    Tree extracted;
    std::vector<std::pair<fs::path, uint32_t>> directoryModes;
    auto source = std::make_shared<const fs::path>(archive);
    try {
        TarReader reader(archive);
        std::ifstream data(archive, std::ios::binary);
        while (auto entry = reader.next()) {
            auto normalized = path::normalizeRelative(entry->name);
            if (!normalized) {
                throw Error(ErrorCode::CorruptPack, "pack member escapes the root: " + entry->name);
            }
            if (normalized->empty()) {
                continue;
            }
            const auto& relative = *normalized;
            requireRealParents(target, relative);
            auto host = target / relative;
            Node node;
            node.mode = entry->mode;
            if (entry->type == '5') {
                node.type = NodeType::Directory;
                if (::mkdir(host.c_str(), 0700) != 0 && errno != EEXIST) {
                    throwSystemError("cannot create " + host.string(), errno);
                }
                directoryModes.emplace_back(host, entry->mode);
            } else if (entry->isRegular()) {
                node.type = NodeType::Regular;
                node.content = Content::fromArchive(source, entry->dataOffset, entry->size);
                int fd = ::open(host.c_str(), O_WRONLY | O_CREAT | O_EXCL | O_NOFOLLOW | O_CLOEXEC, 0600);
                if (fd < 0) {
                    throwSystemError("cannot create " + host.string(), errno);
                }
                data.clear();
                data.seekg(static_cast<std::streamoff>(entry->dataOffset));
                std::array<char, 64 * 1024> buffer{};
                uint64_t remaining = entry->size;
                while (remaining > 0) {
                    auto chunk = static_cast<std::streamsize>(std::min<uint64_t>(remaining, buffer.size()));
                    data.read(buffer.data(), chunk);
                    if (data.gcount() != chunk || ::write(fd, buffer.data(), static_cast<size_t>(chunk)) != chunk) {
                        int saved = errno;
                        ::close(fd);
                        throwSystemError("cannot write " + host.string(), saved ? saved : EIO);
                    }
                    remaining -= static_cast<uint64_t>(chunk);
                }
                ::fchmod(fd, entry->mode & 07777);
                ::close(fd);
            } else if (entry->type == '2') {
                node.type = NodeType::Symlink;
                node.linkTarget = entry->linkName;
                if (::symlink(entry->linkName.c_str(), host.c_str()) != 0) {
                    throwSystemError("cannot create symlink " + host.string(), errno);
                }
            } else {
                throw Error(ErrorCode::CorruptPack, "unexpected member type in pack: " + entry->name);
            }
            extracted[relative] = std::move(node);
        }
        if (!reader.sawEndMarker()) {
            throw Error(ErrorCode::CorruptPack, archive.string() + ": missing end-of-archive marker");
        }
    } catch (const Error& error) {
        if (error.code() == ErrorCode::UnreadableArchive) {
            throw Error(ErrorCode::CorruptPack, error.what());
        }
        throw;
    }
    std::sort(directoryModes.begin(), directoryModes.end(),
              [](const auto& a, const auto& b) { return a.first.native().size() > b.first.native().size(); });
    for (const auto& [dir, mode] : directoryModes) {
        ::chmod(dir.c_str(), mode & 07777);
    }
    return computeImageId(extracted, config);
}

std::string computeArchiveId(const fs::path& archive, const ImageConfig& config) {
    Tree tree;
    auto source = std::make_shared<const fs::path>(archive);
    try {
        TarReader reader(archive);
        while (auto entry = reader.next()) {
            auto normalized = path::normalizeRelative(entry->name);
            if (!normalized) {
                throw Error(ErrorCode::CorruptPack, "pack member escapes the root: " + entry->name);
            }
            if (normalized->empty()) {
                continue;
            }
            Node node;
            node.mode = entry->mode;
            if (entry->type == '5') {
                node.type = NodeType::Directory;
            } else if (entry->isRegular()) {
                node.content = Content::fromArchive(source, entry->dataOffset, entry->size);
            } else if (entry->type == '2') {
                node.type = NodeType::Symlink;
                node.linkTarget = entry->linkName;
            } else {
                throw Error(ErrorCode::CorruptPack, "unexpected member type in pack: " + entry->name);
            }
            if (!tree.emplace(*normalized, std::move(node)).second) {
                throw Error(ErrorCode::CorruptPack, "duplicate pack member: " + entry->name);
            }
        }
        if (!reader.sawEndMarker()) {
            throw Error(ErrorCode::CorruptPack, archive.string() + ": missing end-of-archive marker");
        }
    } catch (const Error& error) {
        if (error.code() == ErrorCode::UnreadableArchive) {
            throw Error(ErrorCode::CorruptPack, error.what());
        }
        throw;
    }
    return computeImageId(tree, config);
}

void materializeTree(const Tree& root, const fs::path& target) {
    std::vector<std::pair<fs::path, uint32_t>> directoryModes;
    for (const auto& [relative, node] : root) {
        auto host = target / relative;
        switch (node.type) {
        case NodeType::Directory:
            fs::create_directories(host);
            directoryModes.emplace_back(host, node.mode);
            break;
        case NodeType::Symlink:
            fs::create_symlink(node.linkTarget, host);
            break;
        case NodeType::Regular: {
            std::ofstream out(host, std::ios::binary | std::ios::trunc);
            node.content.copyTo(out);
            out.close();
            if (!out) {
                storeError("cannot write " + host.string(), errno ? errno : ENOSPC);
            }
            ::chmod(host.c_str(), node.mode & 07777);
            break;
        }
        }
    }
    std::sort(directoryModes.begin(), directoryModes.end(),
              [](const auto& a, const auto& b) { return a.first.native().size() > b.first.native().size(); });
    for (const auto& [dir, mode] : directoryModes) {
        ::chmod(dir.c_str(), mode & 07777);
    }
}

MountedImage::~MountedImage() {
    try {
        release();
    } catch (...) {
    }
}

MountedImage::MountedImage(MountedImage&& other) noexcept {
    *this = std::move(other);
}

MountedImage& MountedImage::operator=(MountedImage&& other) noexcept {
    if (this != &other) {
        try {
            release();
        } catch (...) {
        }
        root_ = std::move(other.root_);
        scratch_ = std::move(other.scratch_);
        mounts_ = std::move(other.mounts_);
        fallback_ = other.fallback_;
        sealed_ = other.sealed_;
        active_ = other.active_;
        removeContent_ = other.removeContent_;
        other.active_ = false;
        other.mounts_.clear();
    }
    return *this;
}

void MountedImage::seal() {
    if (!active_ || sealed_ || fallback_ || mounts_.empty()) {
        return;
    }
    if (::mount(nullptr, root_.c_str(), nullptr, MS_REMOUNT | MS_BIND | MS_RDONLY | MS_NOSUID | MS_NODEV,
                nullptr) != 0) {
        throwSystemError("cannot remount " + root_.string() + " read-only", errno);
    }
    sealed_ = true;
}

void MountedImage::release() {
    if (!active_) {
        return;
    }
    while (!mounts_.empty()) {
        if (int err = mounts::unmount(mounts_.back()); err != 0) {
            throw Error(ErrorCode::CleanupIncomplete,
                        "cannot unmount " + mounts_.back().string() + ": " + std::strerror(err));
        }
        mounts_.pop_back();
    }
    if (!mounts::mountPointsBelow(root_).empty()) {
        throw Error(ErrorCode::CleanupIncomplete, "mounts remain below " + root_.string());
    }
    if (removeContent_) {
        std::error_code ec;
        for (auto it = fs::directory_iterator(root_, ec); !ec && it != fs::directory_iterator(); it.increment(ec)) {
            fsutil::removeTree(it->path());
        }
        ::chmod(root_.c_str(), 0755);
    }
    if (!scratch_.empty()) {
        fsutil::removeTree(scratch_);
    }
    active_ = false;
    sealed_ = false;
}

MountedImage mountPacked(const PackedImage& image, const fs::path& target, const MountOptions& options) {
    std::error_code ec;
    if (!fs::is_directory(target, ec) || !fs::is_empty(target, ec)) {
        throw Error(ErrorCode::MountFailed, "mount target is not an empty directory: " + target.string());
    }
    if (!fs::exists(image.path, ec)) {
        throw Error(ErrorCode::CorruptPack, "pack file missing: " + image.path.string());
    }

    MountedImage mounted;
    mounted.root_ = target;
    mounted.active_ = true;

    if (image.format == PackFormat::Archive) {
        mounted.removeContent_ = true;
        std::string recomputed;
        try {
            recomputed = extractArchive(image.path, target, image.config);
        } catch (...) {
            mounted.release();
            throw;
        }
        if (recomputed != image.imageId) {
            mounted.release();
            throw Error(ErrorCode::CorruptPack, "pack " + image.path.string() + " does not match image id " +
                                                    image.imageId);
        }
        if (::mount(target.c_str(), target.c_str(), nullptr, MS_BIND, nullptr) != 0) {
            if (errno != EPERM && errno != EACCES) {
                int saved = errno;
                mounted.release();
                throwSystemError("cannot bind mount " + target.string(), saved);
            }
            mounted.fallback_ = true;
        } else {
            mounted.mounts_.push_back(target);
        }
    } else {
        mounted.scratch_ = options.scratch.empty() ? target.parent_path() / (".squash-" + fsutil::randomToken(8))
                                                   : options.scratch;
        auto lower = mounted.scratch_ / "lower";
        auto upper = mounted.scratch_ / "upper";
        auto work = mounted.scratch_ / "work";
        fs::create_directories(lower);
        fs::create_directories(upper);
        fs::create_directories(work);
        int status = process::runQuiet({"mount", "-t", "squashfs", "-o", "loop,ro,nosuid,nodev",
                                        image.path.string(), lower.string()});
        if (status != 0) {
            if (process::findOnPath("unsquashfs") &&
                process::runQuiet({"unsquashfs", "-f", "-d", target.string(), image.path.string()}) == 0) {
                mounted.removeContent_ = true;
                mounted.fallback_ = true;
                if (options.sealReadOnly) {
                    mounted.seal();
                }
                return mounted;
            }
            mounted.release();
            throw Error(ErrorCode::MountDenied, "cannot mount squash image " + image.path.string());
        }
        mounted.mounts_.push_back(lower);
        auto data = "lowerdir=" + lower.string() + ",upperdir=" + upper.string() + ",workdir=" + work.string();
        if (::mount("overlay", target.c_str(), "overlay", MS_NOSUID | MS_NODEV, data.c_str()) != 0) {
            int saved = errno;
            mounted.release();
            throw Error(ErrorCode::MountDenied, "cannot create overlay on " + target.string() + ": " +
                                                    std::strerror(saved));
        }
        mounted.mounts_.push_back(target);
    }
    if (options.sealReadOnly) {
        mounted.seal();
    }
    return mounted;
}

}
