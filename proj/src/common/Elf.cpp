#include "hpcrun/common/Elf.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

#include <elf.h>

namespace hpcrun::elf {

namespace {

class Reader {
public:
    explicit Reader(const std::filesystem::path& path)
        : in_(path, std::ios::binary)
    {}

    bool ok() const { return static_cast<bool>(in_); }

    bool read(uint64_t offset, void* out, size_t size) {
        in_.clear();
        in_.seekg(static_cast<std::streamoff>(offset));
        in_.read(static_cast<char*>(out), static_cast<std::streamsize>(size));
        return static_cast<size_t>(in_.gcount()) == size;
    }

    void setSwap(bool swap) { swap_ = swap; }

    template <typename T>
    T fix(T value) const {
        if (!swap_) {
            return value;
        }
        T out{};
        auto* src = reinterpret_cast<const unsigned char*>(&value);
        auto* dst = reinterpret_cast<unsigned char*>(&out);
        for (size_t i = 0; i < sizeof(T); ++i) {
            dst[i] = src[sizeof(T) - 1 - i];
        }
        return out;
    }

private:
    std::ifstream in_;
    bool swap_ = false;
};

template <typename Ehdr, typename Shdr, typename Dyn>
std::optional<std::string> sonameFromSections(Reader& reader) {
    Ehdr header{};
    if (!reader.read(0, &header, sizeof(header))) {
        return std::nullopt;
    }
    auto shoff = reader.fix(header.e_shoff);
    auto shnum = reader.fix(header.e_shnum);
    auto shentsize = reader.fix(header.e_shentsize);
    if (shoff == 0 || shnum == 0 || shentsize < sizeof(Shdr)) {
        return std::nullopt;
    }
    std::vector<Shdr> sections(shnum);
    for (uint16_t i = 0; i < shnum; ++i) {
        if (!reader.read(shoff + uint64_t{i} * shentsize, &sections[i], sizeof(Shdr))) {
            return std::nullopt;
        }
    }
    for (const auto& section : sections) {
        if (reader.fix(section.sh_type) != SHT_DYNAMIC) {
            continue;
        }
        auto link = reader.fix(section.sh_link);
        if (link >= sections.size()) {
            return std::nullopt;
        }
        const auto& strtab = sections[link];
        auto count = reader.fix(section.sh_size) / sizeof(Dyn);
        for (uint64_t i = 0; i < count; ++i) {
            Dyn entry{};
            if (!reader.read(reader.fix(section.sh_offset) + i * sizeof(Dyn), &entry, sizeof(Dyn))) {
                return std::nullopt;
            }
            auto tag = reader.fix(entry.d_tag);
            if (tag == DT_NULL) {
                break;
            }
            if (tag != DT_SONAME) {
                continue;
            }
            auto offset = reader.fix(strtab.sh_offset) + reader.fix(entry.d_un.d_val);
            std::string name;
            char c = 0;
            while (name.size() < 4096 && reader.read(offset + name.size(), &c, 1) && c != '\0') {
                name.push_back(c);
            }
            if (name.empty()) {
                return std::nullopt;
            }
            return name;
        }
    }
    return std::nullopt;
}

}

std::optional<std::string> readSoname(const std::filesystem::path& path) {
    Reader reader(path);
    if (!reader.ok()) {
        return std::nullopt;
    }
    unsigned char ident[EI_NIDENT]{};
    if (!reader.read(0, ident, sizeof(ident)) || std::memcmp(ident, ELFMAG, SELFMAG) != 0) {
        return std::nullopt;
    }
    constexpr uint16_t probe = 1;
    bool hostLittle = *reinterpret_cast<const unsigned char*>(&probe) == 1;
    bool fileLittle = ident[EI_DATA] == ELFDATA2LSB;
    reader.setSwap(hostLittle != fileLittle);
    if (ident[EI_CLASS] == ELFCLASS64) {
        return sonameFromSections<Elf64_Ehdr, Elf64_Shdr, Elf64_Dyn>(reader);
    }
    if (ident[EI_CLASS] == ELFCLASS32) {
        return sonameFromSections<Elf32_Ehdr, Elf32_Shdr, Elf32_Dyn>(reader);
    }
    return std::nullopt;
}

}
