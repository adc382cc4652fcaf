#pragma once

#include <filesystem>
#include <vector>

namespace hpcrun::mounts {

/// Mount points of the calling process's namespace at or below `path`,
/// in /proc/self/mountinfo order.
std::vector<std::filesystem::path> mountPointsBelow(const std::filesystem::path& path);

bool isMountPoint(const std::filesystem::path& path);

/// umount2 with a lazy-detach retry when the mount is busy. Returns errno or 0.
int unmount(const std::filesystem::path& path);

}
