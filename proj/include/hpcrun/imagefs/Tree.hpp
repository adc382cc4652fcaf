#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <ostream>
#include <string>

namespace hpcrun::imagefs {

namespace fs = std::filesystem;

enum class NodeType { Directory, Regular, Symlink };

/// File bytes, either held in memory or referenced as a byte range of an
/// archive on disk (layers are indexed, not copied).
class Content {
public:
    Content() = default;
    static Content fromBytes(std::string bytes);
    static Content fromArchive(std::shared_ptr<const fs::path> archive, uint64_t offset, uint64_t size);

    uint64_t size() const { return size_; }
    std::string read() const;
    void copyTo(std::ostream& out) const;
    std::string sha256() const;

    bool isArchiveBacked() const { return archive_ != nullptr; }
    const fs::path& archive() const { return *archive_; }
    uint64_t offset() const { return offset_; }

private:
    std::shared_ptr<const std::string> bytes_;
    std::shared_ptr<const fs::path> archive_;
    uint64_t offset_ = 0;
    uint64_t size_ = 0;
};

struct Node {
    NodeType type = NodeType::Regular;
    uint32_t mode = 0644;
    /// Recorded from the layer; never applied on extraction.
    uint32_t uid = 0;
    uint32_t gid = 0;
    Content content;
    std::string linkTarget;
    /// A directory the layer never listed, created because an entry lies below
    /// it. Lower layers supply its metadata when they have the directory.
    bool implicit = false;
};

/// Root-relative path ("etc/os-release") to node. The root itself is not an entry.
/// std::map ordering is byte-lexicographic, which is the canonical order.
using Tree = std::map<std::string, Node>;

Node makeDirectory(uint32_t mode = 0755);
Node makeFile(std::string bytes, uint32_t mode = 0644);
Node makeSymlink(std::string target);

std::string parentOf(const std::string& path);
std::string baseNameOf(const std::string& path);

}
