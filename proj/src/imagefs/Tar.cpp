#include "hpcrun/imagefs/Tar.hpp"

#include <algorithm>
#include <array>
#include <cerrno>
#include <cstring>
#include <vector>

#include <zlib.h>

#include "hpcrun/common/Error.hpp"
#include "hpcrun/common/Filesystem.hpp"

namespace hpcrun::imagefs {

namespace {

constexpr size_t blockSize = 512;

[[noreturn]] void malformed(const fs::path& archive, const std::string& what) {
    throw Error(ErrorCode::UnreadableArchive, archive.string() + ": " + what);
}

std::string fieldString(const char* field, size_t length) {
    size_t n = 0;
    while (n < length && field[n] != '\0') {
        ++n;
    }
    return std::string(field, n);
}

std::optional<uint64_t> parseNumeric(const char* field, size_t length) {
    auto first = static_cast<unsigned char>(field[0]);
    if (first & 0x80) {
        // base-256: remaining bits big-endian
        uint64_t value = first & 0x3f;
        for (size_t i = 1; i < length; ++i) {
            if (value > (UINT64_MAX >> 8)) {
                return std::nullopt;
            }
            value = (value << 8) | static_cast<unsigned char>(field[i]);
        }
        return value;
    }
    uint64_t value = 0;
    size_t i = 0;
    while (i < length && (field[i] == ' ' || field[i] == '\0')) {
        ++i;
    }
    bool any = false;
    for (; i < length; ++i) {
        char c = field[i];
        if (c == ' ' || c == '\0') {
            break;
        }
        if (c < '0' || c > '7') {
            return std::nullopt;
        }
        value = value * 8 + static_cast<uint64_t>(c - '0');
        any = true;
    }
    if (!any) {
        return 0;
    }
    return value;
}

bool checksumMatches(const char* block) {
    auto stored = parseNumeric(block + 148, 8);
    if (!stored) {
        return false;
    }
    uint64_t unsignedSum = 0;
    int64_t signedSum = 0;
    for (size_t i = 0; i < blockSize; ++i) {
        bool inChecksum = i >= 148 && i < 156;
        unsignedSum += inChecksum ? ' ' : static_cast<unsigned char>(block[i]);
        signedSum += inChecksum ? ' ' : static_cast<signed char>(block[i]);
    }
    return *stored == unsignedSum || static_cast<int64_t>(*stored) == signedSum;
}

void applyPaxRecords(std::string_view data, TarEntry& entry, const fs::path& archive) {
    size_t pos = 0;
    while (pos < data.size()) {
        auto space = data.find(' ', pos);
        if (space == std::string_view::npos) {
            malformed(archive, "bad pax record");
        }
        size_t length = 0;
        for (size_t i = pos; i < space; ++i) {
            if (data[i] < '0' || data[i] > '9') {
                malformed(archive, "bad pax record length");
            }
            length = length * 10 + static_cast<size_t>(data[i] - '0');
        }
        if (length == 0 || pos + length > data.size() || data[pos + length - 1] != '\n') {
            malformed(archive, "bad pax record length");
        }
        auto record = data.substr(space + 1, pos + length - 1 - (space + 1));
        auto eq = record.find('=');
        if (eq != std::string_view::npos) {
            auto key = record.substr(0, eq);
            auto value = std::string(record.substr(eq + 1));
            if (key == "path") {
                entry.name = value;
            } else if (key == "linkpath") {
                entry.linkName = value;
            } else if (key == "size") {
                entry.size = std::stoull(value);
            } else if (key == "uid") {
                entry.uid = static_cast<uint32_t>(std::stoul(value));
            } else if (key == "gid") {
                entry.gid = static_cast<uint32_t>(std::stoul(value));
            }
        }
        pos += length;
    }
}

}

TarReader::TarReader(const fs::path& archive)
    : path_(archive)
    , in_(archive, std::ios::binary)
{
    if (!in_) {
        throw Error(ErrorCode::UnreadableArchive, "cannot open " + archive.string());
    }
    std::error_code ec;
    fileSize_ = fs::file_size(archive, ec);
    if (ec) {
        throw Error(ErrorCode::UnreadableArchive, "cannot stat " + archive.string());
    }
}

bool TarReader::readBlock(char* block) {
    if (position_ + blockSize > fileSize_) {
        return false;
    }
    in_.seekg(static_cast<std::streamoff>(position_));
    in_.read(block, blockSize);
    if (static_cast<size_t>(in_.gcount()) != blockSize) {
        return false;
    }
    position_ += blockSize;
    return true;
}

std::optional<TarEntry> TarReader::next() {
    if (endMarker_) {
        return std::nullopt;
    }
    std::optional<std::string> longName;
    std::optional<std::string> longLink;
    std::optional<TarEntry> paxOverrides;

    std::array<char, blockSize> block{};
    while (true) {
        if (!readBlock(block.data())) {
            if (position_ == fileSize_ && !longName && !longLink && !paxOverrides) {
                // archive without terminating zero blocks
                return std::nullopt;
            }
            malformed(path_, "truncated header");
        }
        bool allZero = std::all_of(block.begin(), block.end(), [](char c) { return c == '\0'; });
        if (allZero) {
            endMarker_ = true;
            return std::nullopt;
        }
        if (!checksumMatches(block.data())) {
            malformed(path_, "header checksum mismatch at offset " + std::to_string(position_ - blockSize));
        }

        TarEntry entry;
        entry.type = block[156];
        auto mode = parseNumeric(block.data() + 100, 8);
        auto uid = parseNumeric(block.data() + 108, 8);
        auto gid = parseNumeric(block.data() + 116, 8);
        auto size = parseNumeric(block.data() + 124, 12);
        auto mtime = parseNumeric(block.data() + 136, 12);
        if (!mode || !uid || !gid || !size || !mtime) {
            malformed(path_, "bad numeric field");
        }
        entry.mode = static_cast<uint32_t>(*mode & 07777);
        entry.uid = static_cast<uint32_t>(*uid);
        entry.gid = static_cast<uint32_t>(*gid);
        entry.size = *size;
        entry.mtime = static_cast<int64_t>(*mtime);
        entry.name = fieldString(block.data(), 100);
        entry.linkName = fieldString(block.data() + 157, 100);
        if (std::memcmp(block.data() + 257, "ustar", 5) == 0) {
            auto prefix = fieldString(block.data() + 345, 155);
            if (!prefix.empty() && std::memcmp(block.data() + 257, "ustar ", 6) != 0) {
                entry.name = prefix + "/" + entry.name;
            }
        }

        auto dataStart = position_;
        auto padded = (entry.size + blockSize - 1) / blockSize * blockSize;
        bool carriesData = entry.type != '1' && entry.type != '2' && entry.type != '3' &&
                           entry.type != '4' && entry.type != '5' && entry.type != '6';
        if (!carriesData) {
            padded = 0;
        }
        if (dataStart + padded > fileSize_) {
            malformed(path_, "truncated data for " + entry.name);
        }

        if (entry.type == 'x' || entry.type == 'g' || entry.type == 'L' || entry.type == 'K') {
            if (entry.size > 16 * 1024 * 1024) {
                malformed(path_, "oversized metadata record");
            }
            entry.dataOffset = dataStart;
            auto data = readData(entry);
            position_ = dataStart + padded;
            if (entry.type == 'x') {
                TarEntry overrides;
                overrides.size = UINT64_MAX;
                overrides.uid = UINT32_MAX;
                overrides.gid = UINT32_MAX;
                applyPaxRecords(data, overrides, path_);
                paxOverrides = overrides;
            } else if (entry.type == 'L') {
                longName = fieldString(data.data(), data.size());
            } else if (entry.type == 'K') {
                longLink = fieldString(data.data(), data.size());
            }
            continue;
        }

        if (paxOverrides) {
            if (!paxOverrides->name.empty()) {
                entry.name = paxOverrides->name;
            }
            if (!paxOverrides->linkName.empty()) {
                entry.linkName = paxOverrides->linkName;
            }
            if (paxOverrides->size != UINT64_MAX) {
                entry.size = paxOverrides->size;
                padded = carriesData ? (entry.size + blockSize - 1) / blockSize * blockSize : 0;
                if (dataStart + padded > fileSize_) {
                    malformed(path_, "truncated data for " + entry.name);
                }
            }
            if (paxOverrides->uid != UINT32_MAX) {
                entry.uid = paxOverrides->uid;
            }
            if (paxOverrides->gid != UINT32_MAX) {
                entry.gid = paxOverrides->gid;
            }
        }
        if (longName) {
            entry.name = *longName;
        }
        if (longLink) {
            entry.linkName = *longLink;
        }
        if (!carriesData) {
            entry.size = 0;
        }
        entry.dataOffset = dataStart;
        position_ = dataStart + padded;
        return entry;
    }
}

std::string TarReader::readData(const TarEntry& entry) {
    std::string data(entry.size, '\0');
    in_.clear();
    in_.seekg(static_cast<std::streamoff>(entry.dataOffset));
    in_.read(data.data(), static_cast<std::streamsize>(entry.size));
    if (static_cast<uint64_t>(in_.gcount()) != entry.size) {
        malformed(path_, "short read for " + entry.name);
    }
    return data;
}

TarWriter::TarWriter(std::ostream& out)
    : out_(out)
{}

void TarWriter::writeHeader(std::string_view name, char type, uint32_t mode, uint64_t size,
                            std::string_view linkName, uint32_t uid, uint32_t gid, int64_t mtime) {
    std::string paxData;
    auto addRecord = [&paxData](std::string_view key, std::string_view value) {
        // "<len> <key>=<value>\n" where <len> counts itself
        auto body = std::string(" ") + std::string(key) + "=" + std::string(value) + "\n";
        size_t length = body.size() + 1;
        while (std::to_string(length).size() + body.size() != length) {
            ++length;
        }
        paxData += std::to_string(length) + body;
    };
    if (name.size() > 100) {
        addRecord("path", name);
    }
    if (linkName.size() > 100) {
        addRecord("linkpath", linkName);
    }
    if (size > 077777777777ULL) {
        addRecord("size", std::to_string(size));
    }
    if (!paxData.empty()) {
        writeHeader("././@PaxHeader", 'x', 0644, paxData.size(), "", 0, 0, 0);
        out_.write(paxData.data(), static_cast<std::streamsize>(paxData.size()));
        writePadding(paxData.size());
    }

    std::array<char, blockSize> block{};
    auto put = [&block](size_t offset, size_t width, std::string_view value) {
        std::memcpy(block.data() + offset, value.data(), std::min(width, value.size()));
    };
    auto putOctal = [&block](size_t offset, size_t width, uint64_t value) {
        // width-1 digits followed by NUL
        std::string digits(width - 1, '0');
        for (size_t i = width - 1; i-- > 0 && value != 0;) {
            digits[i] = static_cast<char>('0' + (value & 7));
            value >>= 3;
        }
        std::memcpy(block.data() + offset, digits.data(), digits.size());
    };
    put(0, 100, name.substr(0, std::min<size_t>(name.size(), 100)));
    putOctal(100, 8, mode & 07777);
    putOctal(108, 8, uid);
    putOctal(116, 8, gid);
    putOctal(124, 12, size > 077777777777ULL ? 0 : size);
    putOctal(136, 12, static_cast<uint64_t>(mtime));
    block[156] = type;
    put(157, 100, linkName.substr(0, std::min<size_t>(linkName.size(), 100)));
    put(257, 6, std::string_view("ustar\0", 6));
    put(263, 2, "00");
    std::memset(block.data() + 148, ' ', 8);
    uint64_t sum = 0;
    for (char c : block) {
        sum += static_cast<unsigned char>(c);
    }
    std::string checksum(7, '0');
    for (size_t i = 6; i-- > 0 && sum != 0;) {
        checksum[i] = static_cast<char>('0' + (sum & 7));
        sum >>= 3;
    }
    checksum[6] = '\0';
    std::memcpy(block.data() + 148, checksum.data(), 7);
    block[155] = ' ';
    out_.write(block.data(), blockSize);
}

void TarWriter::writePadding(uint64_t size) {
    auto remainder = size % blockSize;
    if (remainder != 0) {
        std::array<char, blockSize> zeros{};
        out_.write(zeros.data(), static_cast<std::streamsize>(blockSize - remainder));
    }
}

void TarWriter::addDirectory(std::string_view name, uint32_t mode, uint32_t uid, uint32_t gid, int64_t mtime) {
    std::string withSlash(name);
    if (withSlash.empty() || withSlash.back() != '/') {
        withSlash.push_back('/');
    }
    writeHeader(withSlash, '5', mode, 0, "", uid, gid, mtime);
}

void TarWriter::addFile(std::string_view name, uint32_t mode, std::string_view data,
                        uint32_t uid, uint32_t gid, int64_t mtime) {
    writeHeader(name, '0', mode, data.size(), "", uid, gid, mtime);
    out_.write(data.data(), static_cast<std::streamsize>(data.size()));
    writePadding(data.size());
}

void TarWriter::addFileFrom(std::string_view name, uint32_t mode, const fs::path& source, uint64_t offset,
                            uint64_t size, uint32_t uid, uint32_t gid, int64_t mtime) {
    std::ifstream in(source, std::ios::binary);
    if (!in) {
        throwSystemError("cannot open " + source.string(), errno);
    }
    in.seekg(static_cast<std::streamoff>(offset));
    writeHeader(name, '0', mode, size, "", uid, gid, mtime);
    std::array<char, 64 * 1024> buffer{};
    uint64_t remaining = size;
    while (remaining > 0) {
        auto chunk = static_cast<std::streamsize>(std::min<uint64_t>(remaining, buffer.size()));
        in.read(buffer.data(), chunk);
        if (in.gcount() != chunk) {
            throw Error(ErrorCode::Internal, "short read from " + source.string());
        }
        out_.write(buffer.data(), chunk);
        remaining -= static_cast<uint64_t>(chunk);
    }
    writePadding(size);
}

void TarWriter::addSymlink(std::string_view name, std::string_view target, uint32_t mode) {
    writeHeader(name, '2', mode, 0, target, 0, 0, 0);
}

void TarWriter::addHardLink(std::string_view name, std::string_view target, uint32_t mode) {
    writeHeader(name, '1', mode, 0, target, 0, 0, 0);
}

void TarWriter::addSpecial(std::string_view name, TarType type, uint32_t mode) {
    writeHeader(name, static_cast<char>(type), mode, 0, "", 0, 0, 0);
}

void TarWriter::finish() {
    if (finished_) {
        return;
    }
    std::array<char, blockSize * 2> zeros{};
    out_.write(zeros.data(), zeros.size());
    out_.flush();
    finished_ = true;
}

bool isGzip(const fs::path& file) {
    std::ifstream in(file, std::ios::binary);
    unsigned char magic[2]{};
    in.read(reinterpret_cast<char*>(magic), 2);
    return in.gcount() == 2 && magic[0] == 0x1f && magic[1] == 0x8b;
}

fs::path decompressIfNeeded(const fs::path& archive, const fs::path& scratchDir) {
    if (!isGzip(archive)) {
        return archive;
    }
    gzFile gz = gzopen(archive.c_str(), "rb");
    if (gz == nullptr) {
        throw Error(ErrorCode::UnreadableArchive, "cannot open " + archive.string());
    }
    auto out = scratchDir / (archive.filename().string() + "." + fsutil::randomToken(6) + ".tar");
    std::ofstream sink(out, std::ios::binary);
    if (!sink) {
        gzclose(gz);
        throwSystemError("cannot create " + out.string(), errno);
    }
    std::vector<char> buffer(256 * 1024);
    while (true) {
        int n = gzread(gz, buffer.data(), static_cast<unsigned>(buffer.size()));
        if (n < 0) {
            int errnum = 0;
            std::string message = gzerror(gz, &errnum);
            gzclose(gz);
            throw Error(ErrorCode::UnreadableArchive, archive.string() + ": " + message);
        }
        if (n == 0) {
            break;
        }
        sink.write(buffer.data(), n);
        if (!sink) {
            gzclose(gz);
            throwSystemError("cannot write " + out.string(), errno ? errno : ENOSPC);
        }
    }
    int errnum = Z_OK;
    std::string message = gzerror(gz, &errnum);
    if (gzclose(gz) == Z_BUF_ERROR || errnum != Z_OK) {
        sink.close();
        std::error_code ec;
        fs::remove(out, ec);
        throw Error(ErrorCode::UnreadableArchive,
                    archive.string() + ": truncated compressed stream" + (message.empty() ? "" : ": " + message));
    }
    return out;
}

}
