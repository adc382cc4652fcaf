#include "hpcrun/common/Filesystem.hpp"

#include <cerrno>
#include <fstream>
#include <random>
#include <sstream>

#include <fcntl.h>
#include <sys/file.h>
#include <sys/stat.h>
#include <unistd.h>

#include "hpcrun/common/Error.hpp"

namespace hpcrun::fsutil {

std::string readFile(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throwSystemError("cannot read " + path.string(), errno);
    }
    std::ostringstream out;
    out << in.rdbuf();
    return out.str();
}

void writeFileAtomic(const fs::path& path, std::string_view content) {
    auto temp = path;
    temp += ".tmp-" + randomToken(8);
    int fd = ::open(temp.c_str(), O_WRONLY | O_CREAT | O_EXCL | O_CLOEXEC, 0644);
    if (fd < 0) {
        throwSystemError("cannot create " + temp.string(), errno);
    }
    size_t written = 0;
    while (written < content.size()) {
        auto n = ::write(fd, content.data() + written, content.size() - written);
        if (n < 0) {
            if (errno == EINTR) {
                continue;
            }
            int saved = errno;
            ::close(fd);
            ::unlink(temp.c_str());
            throwSystemError("cannot write " + temp.string(), saved);
        }
        written += static_cast<size_t>(n);
    }
    if (::fsync(fd) != 0 || ::close(fd) != 0) {
        int saved = errno;
        ::unlink(temp.c_str());
        throwSystemError("cannot flush " + temp.string(), saved);
    }
    if (::rename(temp.c_str(), path.c_str()) != 0) {
        int saved = errno;
        ::unlink(temp.c_str());
        throwSystemError("cannot publish " + path.string(), saved);
    }
}

void removeTree(const fs::path& path) {
    std::error_code ec;
    auto status = fs::symlink_status(path, ec);
    if (ec || !fs::exists(status)) {
        return;
    }
    if (fs::is_directory(status)) {
        ::chmod(path.c_str(), 0700);
        for (auto it = fs::directory_iterator(path, ec); !ec && it != fs::directory_iterator(); it.increment(ec)) {
            removeTree(it->path());
        }
    }
    fs::remove(path, ec);
}

std::string randomToken(size_t length) {
    static thread_local std::mt19937_64 engine{std::random_device{}()};
    static constexpr char hex[] = "0123456789abcdef";
    std::uniform_int_distribution<int> digit(0, 15);
    std::string out;
    out.reserve(length);
    for (size_t i = 0; i < length; ++i) {
        out.push_back(hex[digit(engine)]);
    }
    return out;
}

TempDir::TempDir(const fs::path& base, std::string_view prefix) {
    std::error_code ec;
    fs::create_directories(base, ec);
    if (ec) {
        throwSystemError("cannot create " + base.string(), ec.value());
    }
    auto pattern = (base / (std::string(prefix) + "XXXXXX")).string();
    if (::mkdtemp(pattern.data()) == nullptr) {
        throwSystemError("cannot create temporary directory under " + base.string(), errno);
    }
    path_ = pattern;
}

TempDir::~TempDir() {
    if (!path_.empty()) {
        removeTree(path_);
    }
}

TempDir::TempDir(TempDir&& other) noexcept
    : path_(other.release())
{}

TempDir& TempDir::operator=(TempDir&& other) noexcept {
    if (this != &other) {
        if (!path_.empty()) {
            removeTree(path_);
        }
        path_ = other.release();
    }
    return *this;
}

fs::path TempDir::release() {
    auto out = std::move(path_);
    path_.clear();
    return out;
}

FileLock::FileLock(const fs::path& lockFile) {
    fd_ = ::open(lockFile.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
    if (fd_ < 0) {
        throwSystemError("cannot open lock " + lockFile.string(), errno);
    }
    while (::flock(fd_, LOCK_EX) != 0) {
        if (errno != EINTR) {
            int saved = errno;
            ::close(fd_);
            throwSystemError("cannot lock " + lockFile.string(), saved);
        }
    }
}

FileLock::~FileLock() {
    if (fd_ >= 0) {
        ::flock(fd_, LOCK_UN);
        ::close(fd_);
    }
}

}
