#include "hpcrun/imagefs/Tree.hpp"

#include <algorithm>
#include <array>
#include <cerrno>
#include <fstream>

#include "hpcrun/common/Error.hpp"
#include "hpcrun/common/Hash.hpp"

namespace hpcrun::imagefs {

Content Content::fromBytes(std::string bytes) {
    Content out;
    out.size_ = bytes.size();
    out.bytes_ = std::make_shared<const std::string>(std::move(bytes));
    return out;
}

Content Content::fromArchive(std::shared_ptr<const fs::path> archive, uint64_t offset, uint64_t size) {
    Content out;
    out.archive_ = std::move(archive);
    out.offset_ = offset;
    out.size_ = size;
    return out;
}

std::string Content::read() const {
    if (bytes_) {
        return *bytes_;
    }
    if (!archive_ || size_ == 0) {
        return {};
    }
    std::ifstream in(*archive_, std::ios::binary);
    if (!in) {
        throwSystemError("cannot open " + archive_->string(), errno);
    }
    in.seekg(static_cast<std::streamoff>(offset_));
    std::string data(size_, '\0');
    in.read(data.data(), static_cast<std::streamsize>(size_));
    if (static_cast<uint64_t>(in.gcount()) != size_) {
        throw Error(ErrorCode::UnreadableArchive, "short read from " + archive_->string());
    }
    return data;
}

void Content::copyTo(std::ostream& out) const {
    if (bytes_ || !archive_) {
        if (bytes_) {
            out.write(bytes_->data(), static_cast<std::streamsize>(bytes_->size()));
        }
        return;
    }
    std::ifstream in(*archive_, std::ios::binary);
    if (!in) {
        throwSystemError("cannot open " + archive_->string(), errno);
    }
    in.seekg(static_cast<std::streamoff>(offset_));
    std::array<char, 64 * 1024> buffer{};
    uint64_t remaining = size_;
    while (remaining > 0) {
        auto chunk = static_cast<std::streamsize>(std::min<uint64_t>(remaining, buffer.size()));
        in.read(buffer.data(), chunk);
        if (in.gcount() != chunk) {
            throw Error(ErrorCode::UnreadableArchive, "short read from " + archive_->string());
        }
        out.write(buffer.data(), chunk);
        remaining -= static_cast<uint64_t>(chunk);
    }
}

std::string Content::sha256() const {
    if (bytes_ || !archive_) {
        return sha256Hex(bytes_ ? std::string_view(*bytes_) : std::string_view());
    }
    std::ifstream in(*archive_, std::ios::binary);
    if (!in) {
        throwSystemError("cannot open " + archive_->string(), errno);
    }
    in.seekg(static_cast<std::streamoff>(offset_));
    Sha256 hash;
    std::array<char, 64 * 1024> buffer{};
    uint64_t remaining = size_;
    while (remaining > 0) {
        auto chunk = static_cast<std::streamsize>(std::min<uint64_t>(remaining, buffer.size()));
        in.read(buffer.data(), chunk);
        if (in.gcount() != chunk) {
            throw Error(ErrorCode::UnreadableArchive, "short read from " + archive_->string());
        }
        hash.update(std::string_view(buffer.data(), static_cast<size_t>(chunk)));
        remaining -= static_cast<uint64_t>(chunk);
    }
    return hash.hexDigest();
}

Node makeDirectory(uint32_t mode) {
    Node node;
    node.type = NodeType::Directory;
    node.mode = mode;
    return node;
}

Node makeFile(std::string bytes, uint32_t mode) {
    Node node;
    node.type = NodeType::Regular;
    node.mode = mode;
    node.content = Content::fromBytes(std::move(bytes));
    return node;
}

Node makeSymlink(std::string target) {
    Node node;
    node.type = NodeType::Symlink;
    node.mode = 0777;
    node.linkTarget = std::move(target);
    return node;
}

std::string parentOf(const std::string& path) {
    auto slash = path.rfind('/');
    return slash == std::string::npos ? std::string() : path.substr(0, slash);
}

std::string baseNameOf(const std::string& path) {
    auto slash = path.rfind('/');
    return slash == std::string::npos ? path : path.substr(slash + 1);
}

}
