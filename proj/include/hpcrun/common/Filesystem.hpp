#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace hpcrun::fsutil {

namespace fs = std::filesystem;

std::string readFile(const fs::path& path);

/// Writes to a sibling temporary file, fsyncs, then renames over `path`.
/// Readers observe either the previous or the new content, never a mix.
void writeFileAtomic(const fs::path& path, std::string_view content);

/// Removes a tree, restoring owner write/search permission on directories
/// that would otherwise block removal. Missing paths are ignored.
void removeTree(const fs::path& path);

/// Generates a random lower-case hex token of `length` characters.
std::string randomToken(size_t length = 16);

/// A directory that is removed on destruction unless released.
class TempDir {
public:
    /// Creates `<base>/<prefix><random>`; `base` is created if missing.
    TempDir(const fs::path& base, std::string_view prefix);
    ~TempDir();

    TempDir(TempDir&& other) noexcept;
    TempDir& operator=(TempDir&& other) noexcept;
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const fs::path& path() const { return path_; }
    fs::path release();

private:
    fs::path path_;
};

/// Exclusive advisory lock (flock) on a lock file, held for the object's lifetime.
class FileLock {
public:
    explicit FileLock(const fs::path& lockFile);
    ~FileLock();

    FileLock(const FileLock&) = delete;
    FileLock& operator=(const FileLock&) = delete;

private:
    int fd_ = -1;
};

}
