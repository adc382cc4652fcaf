#include "hpcrun/common/Mounts.hpp"

#include <cerrno>
#include <fstream>
#include <sstream>
#include <string>

#include <sys/mount.h>

#include "hpcrun/common/Path.hpp"

namespace hpcrun::mounts {

namespace {

// mountinfo escapes space, tab, newline and backslash as \ooo
std::string unescape(const std::string& field) {
    std::string out;
    for (size_t i = 0; i < field.size(); ++i) {
        if (field[i] == '\\' && i + 3 < field.size()) {
            auto digits = field.substr(i + 1, 3);
            if (digits.size() == 3 && digits.find_first_not_of("01234567") == std::string::npos) {
                out.push_back(static_cast<char>(std::stoi(digits, nullptr, 8)));
                i += 3;
                continue;
            }
        }
        out.push_back(field[i]);
    }
    return out;
}

std::string canonicalString(const std::filesystem::path& path) {
    std::error_code ec;
    auto resolved = std::filesystem::weakly_canonical(path, ec);
    return (ec ? path : resolved).lexically_normal().string();
}

}

std::vector<std::filesystem::path> mountPointsBelow(const std::filesystem::path& path) {
    std::vector<std::filesystem::path> out;
    auto base = canonicalString(path);
    if (base.size() > 1 && base.back() == '/') {
        base.pop_back();
    }
    std::ifstream in("/proc/self/mountinfo");
    std::string line;
    while (std::getline(in, line)) {
        std::istringstream fields(line);
        std::string id, parent, devices, root, mountPoint;
        fields >> id >> parent >> devices >> root >> mountPoint;
        auto point = unescape(mountPoint);
        if (path::isWithin(base, point)) {
            out.emplace_back(point);
        }
    }
    return out;
}

bool isMountPoint(const std::filesystem::path& path) {
    auto base = canonicalString(path);
    if (base.size() > 1 && base.back() == '/') {
        base.pop_back();
    }
    for (const auto& point : mountPointsBelow(path)) {
        if (point == base) {
            return true;
        }
    }
    return false;
}

int unmount(const std::filesystem::path& path) {
    if (::umount2(path.c_str(), UMOUNT_NOFOLLOW) == 0) {
        return 0;
    }
    if (errno == EBUSY && ::umount2(path.c_str(), MNT_DETACH | UMOUNT_NOFOLLOW) == 0) {
        return 0;
    }
    return errno;
}

}
