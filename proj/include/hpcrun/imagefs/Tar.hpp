#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>

namespace hpcrun::imagefs {

namespace fs = std::filesystem;

enum class TarType : char {
    Regular = '0',
    HardLink = '1',
    Symlink = '2',
    CharDevice = '3',
    BlockDevice = '4',
    Directory = '5',
    Fifo = '6',
};

/// One logical archive member after pax and GNU long-name records are folded in.
struct TarEntry {
    std::string name;
    char type = '0';
    uint32_t mode = 0;
    uint32_t uid = 0;
    uint32_t gid = 0;
    uint64_t size = 0;
    int64_t mtime = 0;
    std::string linkName;
    /// Byte offset of the member's data inside the archive file.
    uint64_t dataOffset = 0;

    bool isRegular() const { return type == '0' || type == '\0' || type == '7'; }
};

/// Sequential reader over an uncompressed tar file. Malformed input throws
/// Error(UnreadableArchive).
class TarReader {
public:
    explicit TarReader(const fs::path& archive);

    std::optional<TarEntry> next();
    std::string readData(const TarEntry& entry);
    /// True once the terminating zero block has been read.
    bool sawEndMarker() const { return endMarker_; }
    const fs::path& path() const { return path_; }

private:
    bool readBlock(char* block);

    fs::path path_;
    std::ifstream in_;
    uint64_t fileSize_ = 0;
    uint64_t position_ = 0;
    bool endMarker_ = false;
};

/// Deterministic ustar writer: names longer than the ustar fields go into a
/// pax extended header with a fixed name, so identical input yields identical bytes.
class TarWriter {
public:
    explicit TarWriter(std::ostream& out);

    void addDirectory(std::string_view name, uint32_t mode, uint32_t uid = 0, uint32_t gid = 0, int64_t mtime = 0);
    void addFile(std::string_view name, uint32_t mode, std::string_view data,
                 uint32_t uid = 0, uint32_t gid = 0, int64_t mtime = 0);
    /// Streams `size` bytes from `source` starting at `offset`.
    void addFileFrom(std::string_view name, uint32_t mode, const fs::path& source, uint64_t offset, uint64_t size,
                     uint32_t uid = 0, uint32_t gid = 0, int64_t mtime = 0);
    void addSymlink(std::string_view name, std::string_view target, uint32_t mode = 0777);
    void addHardLink(std::string_view name, std::string_view target, uint32_t mode = 0644);
    void addSpecial(std::string_view name, TarType type, uint32_t mode);
    void finish();

private:
    void writeHeader(std::string_view name, char type, uint32_t mode, uint64_t size,
                     std::string_view linkName, uint32_t uid, uint32_t gid, int64_t mtime);
    void writePadding(uint64_t size);

    std::ostream& out_;
    bool finished_ = false;
};

/// Returns a path to an uncompressed copy of `archive` inside `scratchDir` when
/// it is gzip-compressed, or `archive` itself otherwise.
fs::path decompressIfNeeded(const fs::path& archive, const fs::path& scratchDir);

bool isGzip(const fs::path& file);

}
