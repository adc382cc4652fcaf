#include "hpcrun/runtime/ContainerRoot.hpp"

#include <cerrno>
#include <cstring>
#include <fcntl.h>
#include <sys/mount.h>
#include <sys/stat.h>
#include <sys/statvfs.h>
#include <unistd.h>

#include "hpcrun/common/Error.hpp"
#include "hpcrun/common/Filesystem.hpp"
#include "hpcrun/common/Mounts.hpp"
#include "hpcrun/common/Path.hpp"

namespace hpcrun::runtime {

namespace {

[[noreturn]] void mountFailed(const MountEntry& entry, const std::string& why) {
    throw Error(ErrorCode::MountFailed, "cannot graft " + entry.source + " at " + entry.target + ": " + why);
}

/// Flags of the source's mount that an unprivileged remount may not clear.
unsigned long lockedFlags(const std::string& source) {
    struct statvfs info {};
    if (::statvfs(source.c_str(), &info) != 0) {
        return 0;
    }
    unsigned long flags = 0;
    if (info.f_flag & ST_NOSUID) {
        flags |= MS_NOSUID;
    }
    if (info.f_flag & ST_NODEV) {
        flags |= MS_NODEV;
    }
    if (info.f_flag & ST_NOEXEC) {
        flags |= MS_NOEXEC;
    }
    if (info.f_flag & ST_RDONLY) {
        flags |= MS_RDONLY;
    }
    return flags;
}

}

ContainerRoot::ContainerRoot(const fs::path& workDir) {
    std::error_code ec;
    fs::create_directories(workDir, ec);
    if (ec) {
        throwSystemError("cannot create work directory " + workDir.string(), ec.value());
    }
    for (int attempt = 0;; ++attempt) {
        id_ = fsutil::randomToken(12);
        launchDir_ = workDir / ("launch-" + id_);
        if (::mkdir(launchDir_.c_str(), 0700) == 0) {
            break;
        }
        if (errno != EEXIST || attempt > 8) {
            throwSystemError("cannot create " + launchDir_.string(), errno);
        }
    }
    root_ = launchDir_ / "root";
    if (::mkdir(root_.c_str(), 0755) != 0) {
        int saved = errno;
        fsutil::removeTree(launchDir_);
        throwSystemError("cannot create " + root_.string(), saved);
    }
}

ContainerRoot::~ContainerRoot() {
    try {
        cleanup();
    } catch (...) {
    }
}

void ContainerRoot::mountImage(const imagefs::PackedImage& image) {
    imagefs::MountOptions options;
    options.sealReadOnly = false;
    options.scratch = launchDir_ / "squash";
    try {
        image_ = imagefs::mountPacked(image, root_, options);
    } catch (const Error& e) {
        if (e.code() == ErrorCode::CorruptPack) {
            throw;
        }
        throw Error(ErrorCode::MountFailed, std::string("cannot mount image: ") + e.what());
    }
}

void ContainerRoot::graft(const MountEntry& entry) {
    struct stat source {};
    if (::stat(entry.source.c_str(), &source) != 0) {
        mountFailed(entry, std::strerror(errno));
    }
    bool directory = S_ISDIR(source.st_mode);
    if (entry.kind == MountKind::BindDir && !directory) {
        mountFailed(entry, "source is not a directory");
    }
    if ((entry.kind == MountKind::BindFile || entry.kind == MountKind::Device) && directory) {
        mountFailed(entry, "source is a directory");
    }
    auto target = path::resolveInRoot(root_, entry.target);
    if (!path::isWithin(root_.string(), target.string())) {
        mountFailed(entry, "target resolves outside the container root");
    }
    struct stat existing {};
    if (::lstat(target.c_str(), &existing) == 0) {
        if (S_ISDIR(existing.st_mode) != directory) {
            mountFailed(entry, directory ? "target exists and is not a directory" : "target is a directory");
        }
    } else {
        std::error_code ec;
        fs::create_directories(target.parent_path(), ec);
        if (ec) {
            mountFailed(entry, "cannot create mount point: " + ec.message());
        }
        if (directory) {
            if (::mkdir(target.c_str(), 0755) != 0 && errno != EEXIST) {
                mountFailed(entry, std::string("cannot create mount point: ") + std::strerror(errno));
            }
        } else {
            int fd = ::open(target.c_str(), O_WRONLY | O_CREAT | O_EXCL | O_NOFOLLOW | O_CLOEXEC, 0644);
            if (fd < 0) {
                mountFailed(entry, std::string("cannot create mount point: ") + std::strerror(errno));
            }
            ::close(fd);
        }
    }
    unsigned long bind = MS_BIND | (directory ? MS_REC : 0);
    if (::mount(entry.source.c_str(), target.c_str(), nullptr, bind, nullptr) != 0) {
        mountFailed(entry, std::strerror(errno));
    }
    grafts_.push_back(target);
    unsigned long flags = MS_REMOUNT | MS_BIND | MS_NOSUID | lockedFlags(entry.source);
    if (entry.kind != MountKind::Device) {
        flags |= MS_NODEV;
    }
    if (!entry.writable) {
        flags |= MS_RDONLY;
    }
    if (::mount(nullptr, target.c_str(), nullptr, flags, nullptr) != 0) {
        mountFailed(entry, std::string("cannot apply mount flags: ") + std::strerror(errno));
    }
}

void ContainerRoot::seal() {
    try {
        image_.seal();
    } catch (const Error& e) {
        throw Error(ErrorCode::MountFailed, e.what());
    }
}

void ContainerRoot::cleanup(std::optional<size_t> stopAfter) {
    if (cleaned_) {
        return;
    }
    size_t done = 0;
    while (!grafts_.empty()) {
        if (stopAfter && done >= *stopAfter) {
            throw Error(ErrorCode::CleanupIncomplete,
                        std::to_string(grafts_.size()) + " grafts still mounted below " + root_.string());
        }
        if (int err = mounts::unmount(grafts_.back()); err != 0 && err != EINVAL && err != ENOENT) {
            throw Error(ErrorCode::CleanupIncomplete,
                        "cannot unmount " + grafts_.back().string() + ": " + std::strerror(err));
        }
        grafts_.pop_back();
        ++done;
    }
    if (stopAfter && done >= *stopAfter && image_.active()) {
        throw Error(ErrorCode::CleanupIncomplete, "image still mounted at " + root_.string());
    }
    image_.release();
    if (!mounts::mountPointsBelow(launchDir_).empty()) {
        throw Error(ErrorCode::CleanupIncomplete, "mounts remain below " + launchDir_.string());
    }
    fsutil::removeTree(launchDir_);
    cleaned_ = true;
}

}
