#include <doctest.h>

#include <functional>
#include <sys/mount.h>
#include <thread>

#include "FixtureRegistry.hpp"
#include "TestSupport.hpp"
#include "hpcrun/common/Error.hpp"
#include "hpcrun/common/Filesystem.hpp"
#include "hpcrun/gateway/ImageGateway.hpp"
#include "hpcrun/imagefs/Pack.hpp"

using namespace hpcrun;
using namespace hpcrun::gateway;
using namespace hpcrun::testing;
namespace fs = std::filesystem;

namespace {

ErrorCode codeOf(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    return ErrorCode::Internal;
}

imagefs::ImageConfig sampleConfig() {
    imagefs::ImageConfig config;
    config.env = {"PATH=/usr/local/bin:/usr/bin:/bin", "APP=fixture"};
    config.cmd = std::vector<std::string>{"/bin/sh"};
    config.workdir = "/opt";
    return config;
}

std::vector<FixtureLayer> sampleLayers() {
    return {
        {dirEntry("etc"), fileEntry("etc/os-release", "ID=base\n"), fileEntry("etc/gone", "x"), dirEntry("opt"),
         fileEntry("opt/old", "old")},
        {whiteoutEntry("etc/gone"), opaqueEntry("opt"), fileEntry("opt/new", "new", 0755),
         symlinkEntry("etc/alias", "os-release")},
        {fileEntry("etc/os-release", "ID=top\n")},
    };
}

GatewayOptions optionsIn(const fs::path& store, const std::string& registryUrl = {}) {
    GatewayOptions options;
    options.store = store;
    options.defaultRegistry = "fixture.test";
    options.registryUrl = registryUrl;
    options.packPreference = imagefs::PackPreference::Archive;
    return options;
}

Snapshot packedSnapshot(const imagefs::PackedImage& packed, const fs::path& scratch) {
    fs::create_directories(scratch);
    CHECK(imagefs::extractArchive(packed.path, scratch, packed.config) == packed.imageId);
    return snapshotOfDirectory(scratch);
}

}

TEST_CASE("site settings map onto gateway options") {
    config::SiteConfig site;
    site.imageStore = "/store";
    site.defaultRegistry = "r.example";
    site.registryUrl = "http://127.0.0.1:1";
    site.packFormat = "squash";
    auto options = gatewayOptionsFrom(site);
    CHECK(options.store == "/store");
    CHECK(options.defaultRegistry == "r.example");
    CHECK(options.registryUrl == "http://127.0.0.1:1");
    CHECK(options.packPreference == imagefs::PackPreference::Squash);
    site.packFormat = "auto";
    site.registryUrl.reset();
    CHECK(gatewayOptionsFrom(site).packPreference == imagefs::PackPreference::Auto);
    CHECK(gatewayOptionsFrom(site).registryUrl.empty());
}

TEST_CASE("imported archives flatten to the layered result in every compression variant") {
    fsutil::TempDir dir(scratchBase(), "gateway-");
    auto layers = sampleLayers();
    auto expected = sequentialOracle(layers);
    ImageGateway gateway(optionsIn(dir.path() / "store"));
    std::string firstId;
    int variant = 0;
    for (bool gzipLayers : {false, true}) {
        for (bool gzipArchive : {false, true}) {
            auto archive = dir.path() / ("saved-" + std::to_string(variant) + ".tar");
            writeSavedImage(archive, layers, sampleConfig(), {gzipLayers, gzipArchive, false, "fixture:latest"});
            auto ref = gateway.parse("fixture:v" + std::to_string(variant));
            auto entry = gateway.importTarball(archive, ref);
            CHECK(entry.state == ImageState::Ready);
            CHECK(entry.reference == ref);
            CHECK(entry.provenance == "import:" + fs::absolute(archive).string());
            CHECK(gateway.lookup(ref) == entry);
            auto packed = gateway.packedImage(entry);
            CHECK(packed.config == sampleConfig());
            CHECK(gateway.verify(entry));
            auto actual = packedSnapshot(packed, dir.path() / ("x" + std::to_string(variant)));
            CHECK_MESSAGE(actual == expected, describeDifference(expected, actual));
            if (firstId.empty()) {
                firstId = entry.imageId;
            }
            CHECK(entry.imageId == firstId);
            ++variant;
        }
    }
    CHECK(gateway.list().size() == 4);
    CHECK(fs::is_empty(dir.path() / "store/tmp"));
}

TEST_CASE("archives that are not saved images are rejected before any catalog change") {
    fsutil::TempDir dir(scratchBase(), "gateway-");
    ImageGateway gateway(optionsIn(dir.path() / "store"));
    auto ref = gateway.parse("broken");

    auto noManifest = dir.path() / "no-manifest.tar";
    writeSavedImage(noManifest, sampleLayers(), sampleConfig(), {false, false, true, "broken:latest"});
    CHECK(codeOf([&] { gateway.importTarball(noManifest, ref); }) == ErrorCode::MissingManifest);

    CHECK(codeOf([&] { gateway.importTarball(dir.path() / "absent.tar", ref); }) == ErrorCode::UnreadableArchive);

    fsutil::writeFileAtomic(dir.path() / "junk.tar", std::string(5000, 'j'));
    CHECK(codeOf([&] { gateway.importTarball(dir.path() / "junk.tar", ref); }) == ErrorCode::UnreadableArchive);

    auto truncated = dir.path() / "truncated.tar.gz";
    writeSavedImage(truncated, sampleLayers(), sampleConfig(), {false, true, false, "broken:latest"});
    auto bytes = fsutil::readFile(truncated);
    fsutil::writeFileAtomic(truncated, bytes.substr(0, bytes.size() / 2));
    CHECK(codeOf([&] { gateway.importTarball(truncated, ref); }) == ErrorCode::UnreadableArchive);

    CHECK(gateway.list().empty());
    CHECK(codeOf([&] { gateway.lookup(ref); }) == ErrorCode::ImageNotFound);
}

TEST_CASE("pulling from a registry with token authentication") {
    FixtureRegistry registry;
    auto manifestDigest = registry.addImage("team/app", "1.0", sampleLayers(), sampleConfig());
    registry.setRequireToken(true);
    registry.start();
    fsutil::TempDir dir(scratchBase(), "gateway-");
    ImageGateway gateway(optionsIn(dir.path() / "store", registry.url()));
    auto ref = gateway.parse("team/app:1.0");

    auto entry = gateway.pull(ref);
    CHECK(entry.state == ImageState::Ready);
    CHECK(entry.manifestDigest == manifestDigest);
    CHECK(entry.provenance == "registry:" + registry.url());
    CHECK(registry.tokenRequests() >= 1);
    auto expected = sequentialOracle(sampleLayers());
    auto actual = packedSnapshot(gateway.packedImage(entry), dir.path() / "x");
    CHECK_MESSAGE(actual == expected, describeDifference(expected, actual));

    SUBCASE("a repeated pull downloads no blob again") {
        auto again = gateway.pull(ref);
        CHECK(again == entry);
        for (const auto& digest : registry.layerDigests("team/app", "1.0")) {
            CHECK(registry.blobDownloads(digest) == 1);
        }
        CHECK(registry.blobDownloads(registry.configDigest("team/app", "1.0")) == 1);
    }
    SUBCASE("pinning the manifest digest yields the same image") {
        auto pinned = gateway.pull(gateway.parse("team/app@" + manifestDigest));
        CHECK(pinned.imageId == entry.imageId);
        CHECK(gateway.list().size() == 2);
    }
}

TEST_CASE("an image index resolves to its linux/amd64 manifest") {
    FixtureRegistry registry;
    registry.addImage("multi", "amd64-only", sampleLayers(), sampleConfig(), false);
    registry.addIndex("multi", "latest", "amd64-only");
    registry.start();
    fsutil::TempDir dir(scratchBase(), "gateway-");
    ImageGateway gateway(optionsIn(dir.path() / "store", registry.url()));
    auto direct = gateway.pull(gateway.parse("multi:amd64-only"));
    auto viaIndex = gateway.pull(gateway.parse("multi"));
    CHECK(viaIndex.state == ImageState::Ready);
    CHECK(viaIndex.imageId == direct.imageId);
}

TEST_CASE("registry failures") {
    FixtureRegistry registry;
    registry.addImage("app", "latest", sampleLayers(), sampleConfig());
    registry.start();
    fsutil::TempDir dir(scratchBase(), "gateway-");
    ImageGateway gateway(optionsIn(dir.path() / "store", registry.url()));

    SUBCASE("unknown tag") {
        CHECK(codeOf([&] { gateway.pull(gateway.parse("app:nope")); }) == ErrorCode::ManifestNotFound);
        CHECK(gateway.list().empty());
    }
    SUBCASE("damaged layer blobs leave a FAILED entry") {
        registry.setCorruptBlobs(true);
        auto ref = gateway.parse("app");
        CHECK(codeOf([&] { gateway.pull(ref); }) == ErrorCode::DigestMismatch);
        auto entry = gateway.lookup(ref);
        CHECK(entry.state == ImageState::Failed);
        CHECK_FALSE(entry.error.empty());
        CHECK(codeOf([&] { gateway.packedImage(entry); }) == ErrorCode::ImageNotReady);
        CHECK_FALSE(gateway.verify(entry));
        CHECK((!fs::exists(dir.path() / "store/images") || fs::is_empty(dir.path() / "store/images")));

        registry.setCorruptBlobs(false);
        CHECK(gateway.pull(ref).state == ImageState::Ready);
    }
    SUBCASE("nothing listening") {
        auto url = registry.url();
        registry.stop();
        ImageGateway offline(optionsIn(dir.path() / "store", url));
        CHECK(codeOf([&] { offline.pull(offline.parse("app")); }) == ErrorCode::RegistryUnreachable);
    }
}

TEST_CASE("concurrent pulls of one reference in a process share one download") {
    FixtureRegistry registry;
    registry.addImage("shared", "latest", sampleLayers(), sampleConfig());
    registry.setBlobDelay(std::chrono::milliseconds(150));
    registry.start();
    fsutil::TempDir dir(scratchBase(), "gateway-");
    ImageGateway gateway(optionsIn(dir.path() / "store", registry.url()));
    auto ref = gateway.parse("shared");
    std::vector<CatalogEntry> results(6);
    std::vector<std::thread> threads;
    for (size_t i = 0; i < results.size(); ++i) {
        threads.emplace_back([&, i] { results[i] = gateway.pull(ref); });
    }
    for (auto& t : threads) {
        t.join();
    }
    for (const auto& result : results) {
        CHECK(result.state == ImageState::Ready);
        CHECK(result.imageId == results[0].imageId);
    }
    for (const auto& digest : registry.layerDigests("shared", "latest")) {
        CHECK(registry.blobDownloads(digest) == 1);
    }
    CHECK(gateway.list().size() == 1);
}

TEST_CASE("entries that are not READY cannot be run") {
    fsutil::TempDir dir(scratchBase(), "gateway-");
    ImageGateway gateway(optionsIn(dir.path() / "store"));
    CatalogEntry pulling;
    pulling.reference = gateway.parse("busy");
    pulling.state = ImageState::Pulling;
    pulling.createdAt = "2020-01-01T00:00:00.000000Z";
    Catalog(dir.path() / "store").put(pulling);
    auto entry = gateway.lookup(gateway.parse("busy"));
    CHECK(entry.state == ImageState::Pulling);
    CHECK(codeOf([&] { gateway.packedImage(entry); }) == ErrorCode::ImageNotReady);
}

TEST_CASE("verify notices a modified pack") {
    fsutil::TempDir dir(scratchBase(), "gateway-");
    ImageGateway gateway(optionsIn(dir.path() / "store"));
    auto archive = dir.path() / "saved.tar";
    writeSavedImage(archive, sampleLayers(), sampleConfig());
    auto entry = gateway.importTarball(archive, gateway.parse("fixture"));
    REQUIRE(gateway.verify(entry));
    auto bytes = fsutil::readFile(entry.packPath);
    bytes[bytes.size() / 3] ^= 1;
    fsutil::writeFileAtomic(entry.packPath, bytes);
    CHECK_FALSE(gateway.verify(entry));
    fs::remove(entry.packPath);
    CHECK_FALSE(gateway.verify(entry));
}

TEST_CASE("list is sorted by repository then tag") {
    fsutil::TempDir dir(scratchBase(), "gateway-");
    ImageGateway gateway(optionsIn(dir.path() / "store"));
    auto archive = dir.path() / "saved.tar";
    writeSavedImage(archive, {{fileEntry("f", "x")}}, sampleConfig());
    for (const char* raw : {"zeta:1", "alpha:2", "alpha:10", "mid"}) {
        gateway.importTarball(archive, gateway.parse(raw));
    }
    std::vector<std::string> names;
    for (const auto& entry : gateway.list()) {
        names.push_back(entry.reference.shortName());
    }
    CHECK(names == std::vector<std::string>{"alpha:10", "alpha:2", "mid:latest", "zeta:1"});
}

TEST_CASE("an unwritable or full store reports StorageFull") {
    REQUIRE(enterPrivateMountNamespace());
    fsutil::TempDir dir(scratchBase(), "gateway-");
    auto archive = dir.path() / "saved.tar";
    writeSavedImage(archive, {{fileEntry("big", std::string(2 << 20, 'b'))}}, sampleConfig());
    auto store = dir.path() / "store";
    fs::create_directories(store);

    SUBCASE("read-only") {
        REQUIRE(::mount("tmpfs", store.c_str(), "tmpfs", MS_RDONLY, "size=1m") == 0);
        ImageGateway gateway(optionsIn(store));
        CHECK(codeOf([&] { gateway.importTarball(archive, gateway.parse("big")); }) == ErrorCode::StorageFull);
    }
    SUBCASE("full") {
        REQUIRE(::mount("tmpfs", store.c_str(), "tmpfs", 0, "size=512k") == 0);
        ImageGateway gateway(optionsIn(store));
        CHECK(codeOf([&] { gateway.importTarball(archive, gateway.parse("big")); }) == ErrorCode::StorageFull);
    }
    ::umount2(store.c_str(), MNT_DETACH);
}
