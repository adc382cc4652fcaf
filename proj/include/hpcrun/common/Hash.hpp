#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <string_view>

namespace hpcrun {

/// Incremental SHA-256. digest() finalizes; the object cannot be reused afterwards.
class Sha256 {
public:
    Sha256();
    ~Sha256();
    Sha256(Sha256&&) noexcept;
    Sha256& operator=(Sha256&&) noexcept;

    void update(std::string_view data);
    /// Lower-case hex, 64 characters.
    std::string hexDigest();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

std::string sha256Hex(std::string_view data);
std::string sha256HexOfFile(const std::filesystem::path& path);

}
