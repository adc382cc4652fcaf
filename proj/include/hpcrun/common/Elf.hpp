#pragma once

#include <filesystem>
#include <optional>
#include <string>

namespace hpcrun::elf {

/// Reads DT_SONAME from a 32- or 64-bit little/big-endian ELF shared object.
/// Returns nullopt when the file is not ELF or carries no soname.
std::optional<std::string> readSoname(const std::filesystem::path& path);

}
