#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

namespace hpcrun::path {

/// Lexically normalizes an archive member name to a root-relative path
/// ("./a//b/../c" -> "a/c"). Returns nullopt when `..` climbs above the root.
/// The root itself normalizes to "".
std::optional<std::string> normalizeRelative(std::string_view raw);

/// Normalizes an absolute in-container path ("/a/./b/" -> "/a/b").
/// Returns nullopt for relative input or when `..` climbs above "/".
std::optional<std::string> normalizeAbsolute(std::string_view raw);

/// True when `child` equals `parent` or lies below it (both normalized absolute).
bool isWithin(std::string_view parent, std::string_view child);

/// Resolves an absolute container path to a host path below `root`, following
/// symlinks as if `root` were "/". Symlinks (absolute or relative) can never
/// lead outside `root`. When `followLast` is false the final component is not
/// dereferenced.
std::filesystem::path resolveInRoot(const std::filesystem::path& root,
                                    std::string_view containerPath,
                                    bool followLast = true);

}
