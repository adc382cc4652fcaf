#include <doctest.h>

#include <fstream>
#include <sstream>

#include "TestSupport.hpp"
#include "hpcrun/common/Error.hpp"
#include "hpcrun/common/Filesystem.hpp"
#include "hpcrun/imagefs/Tar.hpp"

using namespace hpcrun;
using namespace hpcrun::imagefs;
namespace fs = std::filesystem;

namespace {

fs::path writeBytes(const fs::path& path, const std::string& data) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
    return path;
}

std::vector<TarEntry> readAll(const fs::path& archive) {
    TarReader reader(archive);
    std::vector<TarEntry> entries;
    while (auto e = reader.next()) {
        entries.push_back(*e);
    }
    return entries;
}

}

TEST_CASE("writer output reads back member by member") {
    fsutil::TempDir dir(testing::scratchBase(), "tar-");
    std::string longName = "deep/" + std::string(150, 'n') + "/" + std::string(120, 'f');
    std::ostringstream out;
    TarWriter writer(out);
    writer.addDirectory("deep", 0750, 1000, 100);
    writer.addFile("deep/file", 0640, "hello", 12, 34, 1500000000);
    writer.addFile(longName, 0600, "long");
    writer.addSymlink("deep/link", std::string(200, 't'));
    writer.addHardLink("deep/hard", "deep/file");
    writer.finish();
    auto archive = writeBytes(dir.path() / "a.tar", out.str());

    CHECK(out.str().size() % 512 == 0);
    TarReader reader(archive);
    std::vector<TarEntry> entries;
    while (auto e = reader.next()) {
        entries.push_back(*e);
    }
    CHECK(reader.sawEndMarker());
    REQUIRE(entries.size() == 5);
    CHECK(entries[0].name == "deep/");
    CHECK(entries[0].type == '5');
    CHECK(entries[0].mode == 0750);
    CHECK(entries[0].uid == 1000);
    CHECK(entries[0].gid == 100);
    CHECK(entries[1].name == "deep/file");
    CHECK(entries[1].size == 5);
    CHECK(entries[1].mtime == 1500000000);
    CHECK(reader.readData(entries[1]) == "hello");
    CHECK(entries[2].name == longName);
    CHECK(reader.readData(entries[2]) == "long");
    CHECK(entries[3].type == '2');
    CHECK(entries[3].linkName == std::string(200, 't'));
    CHECK(entries[4].type == '1');
    CHECK(entries[4].linkName == "deep/file");
}

TEST_CASE("GNU tar lists and extracts writer output") {
    fsutil::TempDir dir(testing::scratchBase(), "tar-");
    std::string longName = std::string(180, 'x') + ".txt";
    std::ostringstream out;
    TarWriter writer(out);
    writer.addDirectory("d", 0755);
    writer.addFile("d/" + longName, 0644, "payload");
    writer.addSymlink("d/l", "../target");
    writer.finish();
    auto archive = writeBytes(dir.path() / "a.tar", out.str());
    fs::create_directories(dir.path() / "x");
    auto result = testing::runProcess({"/bin/tar", "-xf", archive.string(), "-C", (dir.path() / "x").string()});
    REQUIRE(result.status == 0);
    CHECK(fsutil::readFile(dir.path() / "x/d" / longName) == "payload");
    CHECK(fs::read_symlink(dir.path() / "x/d/l") == "../target");
}

TEST_CASE("reader understands GNU and pax long names from GNU tar") {
    fsutil::TempDir dir(testing::scratchBase(), "tar-");
    auto src = dir.path() / "src";
    std::string longDir = std::string(120, 'd');
    std::string longFile = std::string(140, 'f');
    fs::create_directories(src / longDir);
    fsutil::writeFileAtomic(src / longDir / longFile, "content");
    fs::create_symlink(std::string(150, 'l'), src / "link");
    for (const char* format : {"gnu", "pax"}) {
        auto archive = dir.path() / (std::string(format) + ".tar");
        auto result = testing::runProcess(
            {"/bin/tar", "--format", format, "-cf", archive.string(), "-C", src.string(), "."});
        REQUIRE(result.status == 0);
        bool sawFile = false;
        bool sawLink = false;
        TarReader reader(archive);
        while (auto e = reader.next()) {
            if (e->name == "./" + longDir + "/" + longFile) {
                sawFile = true;
                CHECK(reader.readData(*e) == "content");
            }
            if (e->name == "./link") {
                sawLink = true;
                CHECK(e->linkName == std::string(150, 'l'));
            }
        }
        CHECK_MESSAGE(sawFile, format);
        CHECK_MESSAGE(sawLink, format);
    }
}

TEST_CASE("damaged archives raise UnreadableArchive") {
    fsutil::TempDir dir(testing::scratchBase(), "tar-");
    std::ostringstream out;
    TarWriter writer(out);
    writer.addFile("f", 0644, std::string(4000, 'a'));
    writer.finish();
    auto good = out.str();

    SUBCASE("bad checksum") {
        auto bad = good;
        bad[0] = 'g';
        auto archive = writeBytes(dir.path() / "bad.tar", bad);
        CHECK_THROWS_AS(readAll(archive), Error);
    }
    SUBCASE("truncated data") {
        auto archive = writeBytes(dir.path() / "short.tar", good.substr(0, 1024));
        try {
            readAll(archive);
            FAIL("no error");
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::UnreadableArchive);
        }
    }
    SUBCASE("garbage") {
        auto archive = writeBytes(dir.path() / "junk.tar", std::string(1536, '\x7f'));
        CHECK_THROWS_AS(readAll(archive), Error);
    }
}

TEST_CASE("identical input gives identical bytes") {
    auto build = [] {
        std::ostringstream out;
        TarWriter writer(out);
        writer.addDirectory("a", 0755);
        writer.addFile("a/" + std::string(300, 'z'), 0644, "x");
        writer.finish();
        return out.str();
    };
    CHECK(build() == build());
}

TEST_CASE("gzip layers are detected and decompressed") {
    fsutil::TempDir dir(testing::scratchBase(), "tar-");
    auto plain = testing::layerTar({testing::fileEntry("f", "data")});
    auto gz = writeBytes(dir.path() / "l.tar.gz", testing::gzipBytes(plain));
    auto raw = writeBytes(dir.path() / "l.tar", plain);
    CHECK(isGzip(gz));
    CHECK_FALSE(isGzip(raw));
    CHECK(decompressIfNeeded(raw, dir.path()) == raw);
    auto out = decompressIfNeeded(gz, dir.path());
    CHECK(out != gz);
    CHECK(fsutil::readFile(out) == plain);

    auto broken = testing::gzipBytes(plain);
    broken.resize(broken.size() / 2);
    auto bad = writeBytes(dir.path() / "bad.tar.gz", broken);
    CHECK_THROWS_AS(decompressIfNeeded(bad, dir.path()), Error);
}
