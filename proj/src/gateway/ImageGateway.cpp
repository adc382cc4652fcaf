#include "hpcrun/gateway/ImageGateway.hpp"

#include <algorithm>
#include <fstream>

#include <nlohmann/json.hpp>

#include "hpcrun/common/Error.hpp"
#include "hpcrun/common/Filesystem.hpp"
#include "hpcrun/common/Hash.hpp"
#include "hpcrun/common/Path.hpp"
#include "hpcrun/common/Time.hpp"
#include "hpcrun/imagefs/Flatten.hpp"
#include "hpcrun/imagefs/Layer.hpp"
#include "hpcrun/imagefs/Tar.hpp"

namespace hpcrun::gateway {

namespace {

using nlohmann::json;

imagefs::PackPreference preferenceFromName(const std::string& name) {
    if (name == "squash") {
        return imagefs::PackPreference::Squash;
    }
    if (name == "archive") {
        return imagefs::PackPreference::Archive;
    }
    return imagefs::PackPreference::Auto;
}

/// Members of a saved-image archive, addressed by normalized name.
class SavedArchive {
public:
    explicit SavedArchive(const fs::path& archive) : reader_(archive), archive_(archive) {
        while (auto entry = reader_.next()) {
            auto name = path::normalizeRelative(entry->name);
            if (name && !name->empty()) {
                members_[*name] = *entry;
            }
        }
    }

    const imagefs::TarEntry* find(const std::string& rawName, int depth = 0) const {
        auto name = path::normalizeRelative(rawName);
        if (!name) {
            return nullptr;
        }
        auto it = members_.find(*name);
        if (it == members_.end()) {
            return nullptr;
        }
        const auto& entry = it->second;
        if ((entry.type == '2' || entry.type == '1') && depth < 8) {
            auto target = entry.type == '1' || entry.linkName.front() == '/'
                              ? entry.linkName
                              : imagefs::parentOf(*name) + "/" + entry.linkName;
            return find(target, depth + 1);
        }
        return entry.isRegular() ? &entry : nullptr;
    }

    std::string read(const imagefs::TarEntry& entry) { return reader_.readData(entry); }

    void copyTo(const imagefs::TarEntry& entry, const fs::path& dest) const {
        std::ofstream out(dest, std::ios::binary | std::ios::trunc);
        imagefs::Content::fromArchive(std::make_shared<const fs::path>(archive_), entry.dataOffset, entry.size)
            .copyTo(out);
        out.close();
        if (!out) {
            throw Error(ErrorCode::StorageFull, "cannot write " + dest.string());
        }
    }

private:
    imagefs::TarReader reader_;
    fs::path archive_;
    std::map<std::string, imagefs::TarEntry> members_;
};

}

GatewayOptions gatewayOptionsFrom(const config::SiteConfig& site) {
    GatewayOptions options;
    options.store = site.imageStore;
    options.defaultRegistry = site.defaultRegistry;
    options.registryUrl = site.registryUrl.value_or("");
    options.packPreference = preferenceFromName(site.packFormat);
    return options;
}

fs::path metaPathFor(const fs::path& packPath) {
    auto meta = packPath;
    meta.replace_extension(".meta");
    return meta;
}

ImageGateway::ImageGateway(GatewayOptions options)
    : options_(std::move(options)), catalog_(options_.store), client_(options_.registryUrl) {}

ImageGateway::ImageGateway(const config::SiteConfig& site) : ImageGateway(gatewayOptionsFrom(site)) {}

ImageReference ImageGateway::parse(std::string_view raw) const {
    return parseImageReference(raw, options_.defaultRegistry);
}

fs::path ImageGateway::lockPathFor(const ImageReference& ref) const {
    return options_.store / "locks" / (sha256Hex(ref.render()).substr(0, 32) + ".lock");
}

CatalogEntry ImageGateway::deduplicated(const ImageReference& ref, const std::function<CatalogEntry()>& work) {
    auto key = ref.render();
    std::promise<CatalogEntry> promise;
    std::shared_future<CatalogEntry> joined;
    {
        std::lock_guard lock(inflightMutex_);
        if (auto it = inflight_.find(key); it != inflight_.end()) {
            joined = it->second;
        } else {
            inflight_.emplace(key, promise.get_future().share());
        }
    }
    if (joined.valid()) {
        return joined.get();
    }
    try {
        fs::create_directories(options_.store / "locks");
        fsutil::FileLock lock(lockPathFor(ref));
        promise.set_value(work());
    } catch (const fs::filesystem_error& e) {
        auto code = isStorageErrno(e.code().value()) ? ErrorCode::StorageFull : ErrorCode::Internal;
        promise.set_exception(std::make_exception_ptr(Error(code, e.what())));
    } catch (...) {
        promise.set_exception(std::current_exception());
    }
    std::shared_future<CatalogEntry> result;
    {
        std::lock_guard lock(inflightMutex_);
        result = inflight_.at(key);
        inflight_.erase(key);
    }
    return result.get();
}

CatalogEntry ImageGateway::pull(const ImageReference& ref) {
    return deduplicated(ref, [&] { return pullLocked(ref); });
}

CatalogEntry ImageGateway::importTarball(const fs::path& archive, const ImageReference& ref) {
    return deduplicated(ref, [&] { return importLocked(archive, ref); });
}

CatalogEntry ImageGateway::publishPulling(const ImageReference& ref, const std::string& provenance,
                                          const std::string& manifestDigest) {
    CatalogEntry entry;
    entry.reference = ref;
    entry.state = ImageState::Pulling;
    entry.createdAt = isoTimestamp();
    entry.provenance = provenance;
    entry.manifestDigest = manifestDigest;
    catalog_.put(entry);
    return entry;
}

void ImageGateway::markFailed(CatalogEntry entry, const std::string& message) {
    entry.state = ImageState::Failed;
    entry.imageId.clear();
    entry.packPath.clear();
    entry.error = message;
    try {
        catalog_.put(entry);
    } catch (...) {
        // The original error is the one worth reporting.
    }
}

CatalogEntry ImageGateway::pullLocked(const ImageReference& ref) {
    auto manifest = client_.fetchManifest(ref);
    if (auto existing = catalog_.find(ref); existing && existing->state == ImageState::Ready &&
                                              existing->manifestDigest == manifest.digest &&
                                              fs::exists(existing->packPath)) {
        return *existing;
    }
    auto provenance = "registry:" + (options_.registryUrl.empty() ? ref.registry : options_.registryUrl);
    auto entry = publishPulling(ref, provenance, manifest.digest);
    try {
        fsutil::TempDir scratch(options_.store / "tmp", "pull-");
        client_.fetchConfig(manifest);
        std::vector<fs::path> layers;
        for (const auto& layer : manifest.layers) {
            auto dest = scratch.path() / ("layer-" + sha256HexOfDigest(layer.digest));
            client_.fetchBlob(ref, layer.digest, dest);
            layers.push_back(dest);
        }
        return buildAndPublish(entry, layers, manifest.config, scratch.path());
    } catch (const Error& e) {
        markFailed(entry, e.what());
        throw;
    } catch (const fs::filesystem_error& e) {
        markFailed(entry, e.what());
        throw Error(isStorageErrno(e.code().value()) ? ErrorCode::StorageFull : ErrorCode::Internal, e.what());
    } catch (const std::exception& e) {
        markFailed(entry, e.what());
        throw Error(ErrorCode::Internal, e.what());
    }
}

CatalogEntry ImageGateway::importLocked(const fs::path& archive, const ImageReference& ref) {
    std::error_code ec;
    if (!fs::is_regular_file(archive, ec)) {
        throw Error(ErrorCode::UnreadableArchive, archive.string() + ": not a readable file");
    }
    auto absolute = fs::absolute(archive);
    fsutil::TempDir scratch(options_.store / "tmp", "import-");
    fs::path plain;
    try {
        plain = imagefs::decompressIfNeeded(absolute, scratch.path());
    } catch (const Error& e) {
        throw Error(ErrorCode::UnreadableArchive, e.what());
    }
    std::optional<SavedArchive> saved;
    try {
        saved.emplace(plain);
    } catch (const Error& e) {
        if (e.code() == ErrorCode::UnreadableArchive) {
            throw;
        }
        throw Error(ErrorCode::UnreadableArchive, e.what());
    }
    const auto* manifestMember = saved->find("manifest.json");
    if (!manifestMember) {
        throw Error(ErrorCode::MissingManifest, absolute.string() + ": archive has no manifest.json");
    }
    json manifest;
    try {
        manifest = json::parse(saved->read(*manifestMember));
    } catch (const json::exception&) {
        throw Error(ErrorCode::MissingManifest, absolute.string() + ": manifest.json is not valid JSON");
    }
    if (!manifest.is_array() || manifest.empty()) {
        throw Error(ErrorCode::MissingManifest, absolute.string() + ": manifest.json lists no images");
    }
    // Prefer the image tagged as requested; single-image archives need no match.
    json chosen = manifest.front();
    for (const auto& image : manifest) {
        for (const auto& tag : image.value("RepoTags", json::array())) {
            if (tag.is_string() && tag.get<std::string>() == ref.repository + ":" + ref.tag) {
                chosen = image;
            }
        }
    }
    if (!chosen.is_object() || !chosen.contains("Config") || !chosen.contains("Layers") ||
        !chosen["Layers"].is_array()) {
        throw Error(ErrorCode::MissingManifest, absolute.string() + ": manifest.json lacks Config or Layers");
    }
    imagefs::ImageConfig config;
    {
        auto configName = chosen["Config"].get<std::string>();
        const auto* member = saved->find(configName);
        if (!member) {
            throw Error(ErrorCode::MissingManifest, absolute.string() + ": missing image config " + configName);
        }
        try {
            config = imagefs::imageConfigFromRegistryBlob(json::parse(saved->read(*member)));
        } catch (const json::exception&) {
            throw Error(ErrorCode::UnreadableArchive, absolute.string() + ": image config is not valid JSON");
        }
    }
    std::vector<const imagefs::TarEntry*> members;
    std::vector<LayerDescriptor> descriptors;
    for (const auto& layer : chosen["Layers"]) {
        auto name = layer.get<std::string>();
        const auto* member = saved->find(name);
        if (!member) {
            throw Error(ErrorCode::UnreadableArchive, absolute.string() + ": missing layer archive " + name);
        }
        members.push_back(member);
        descriptors.push_back({name, member->size, ""});
    }
    try {
        validateLayers(descriptors, absolute.string());
    } catch (const Error& e) {
        throw Error(ErrorCode::UnreadableArchive, e.what());
    }

    auto entry = publishPulling(ref, "import:" + absolute.string(), "");
    try {
        std::vector<fs::path> layers;
        for (size_t i = 0; i < members.size(); ++i) {
            auto dest = scratch.path() / ("layer-" + std::to_string(i));
            saved->copyTo(*members[i], dest);
            layers.push_back(dest);
        }
        saved.reset();
        if (plain != absolute) {
            fs::remove(plain);
        }
        return buildAndPublish(entry, layers, config, scratch.path());
    } catch (const Error& e) {
        markFailed(entry, e.what());
        throw;
    } catch (const fs::filesystem_error& e) {
        markFailed(entry, e.what());
        throw Error(isStorageErrno(e.code().value()) ? ErrorCode::StorageFull : ErrorCode::Internal, e.what());
    } catch (const std::exception& e) {
        markFailed(entry, e.what());
        throw Error(ErrorCode::Internal, e.what());
    }
}

CatalogEntry ImageGateway::buildAndPublish(CatalogEntry entry, const std::vector<fs::path>& layers,
                                           const imagefs::ImageConfig& config, const fs::path& scratch) {
    imagefs::LayerStack stack;
    for (const auto& layer : layers) {
        fs::path plainLayer;
        try {
            plainLayer = imagefs::decompressIfNeeded(layer, scratch);
        } catch (const Error& e) {
            throw Error(ErrorCode::UnreadableArchive, e.what());
        }
        stack.layers.push_back(imagefs::indexLayer(plainLayer));
        if (plainLayer != layer) {
            // The compressed copy is no longer needed; the index points into plainLayer.
            fs::remove(layer);
        }
    }
    auto flattened = imagefs::flattenImage(stack, config);
    auto packed = imagefs::pack(flattened, options_.store, options_.packPreference);

    json meta{
        {"imageId", packed.imageId},
        {"format", imagefs::packFormatName(packed.format)},
        {"config", imagefs::toJson(packed.config)},
        {"source", entry.reference.render()},
        {"provenance", entry.provenance},
        {"packSha256", sha256HexOfFile(packed.path)},
    };
    fsutil::writeFileAtomic(metaPathFor(packed.path), meta.dump(2) + "\n");

    entry.state = ImageState::Ready;
    entry.imageId = packed.imageId;
    entry.packPath = packed.path;
    entry.createdAt = isoTimestamp();
    entry.error.clear();
    catalog_.put(entry);
    return entry;
}

std::vector<CatalogEntry> ImageGateway::list() const {
    auto entries = catalog_.entries();
    std::sort(entries.begin(), entries.end(), [](const CatalogEntry& a, const CatalogEntry& b) {
        return std::tie(a.reference.repository, a.reference.tag, a.reference.registry, a.reference.digest) <
               std::tie(b.reference.repository, b.reference.tag, b.reference.registry, b.reference.digest);
    });
    return entries;
}

CatalogEntry ImageGateway::lookup(const ImageReference& ref) const {
    auto entry = catalog_.find(ref);
    if (!entry) {
        throw Error(ErrorCode::ImageNotFound, "image " + ref.render() + " is not in the catalog");
    }
    return *entry;
}

imagefs::PackedImage ImageGateway::packedImage(const CatalogEntry& entry) const {
    if (entry.state != ImageState::Ready) {
        throw Error(ErrorCode::ImageNotReady,
                    "image " + entry.reference.render() + " is " + std::string(imageStateName(entry.state)));
    }
    json meta;
    try {
        meta = json::parse(fsutil::readFile(metaPathFor(entry.packPath)));
    } catch (const std::exception& e) {
        throw Error(ErrorCode::CorruptPack, "cannot read metadata for " + entry.packPath.string() + ": " + e.what());
    }
    imagefs::PackedImage packed;
    packed.path = entry.packPath;
    packed.imageId = entry.imageId;
    try {
        auto format = imagefs::packFormatFromName(meta.at("format").get<std::string>());
        if (!format) {
            throw Error(ErrorCode::CorruptPack, "unknown pack format in " + metaPathFor(entry.packPath).string());
        }
        packed.format = *format;
        packed.config = imagefs::imageConfigFromJson(meta.at("config"));
        if (meta.at("imageId").get<std::string>() != entry.imageId) {
            throw Error(ErrorCode::CorruptPack, "metadata of " + entry.packPath.string() + " names another image");
        }
    } catch (const json::exception& e) {
        throw Error(ErrorCode::CorruptPack, "malformed metadata for " + entry.packPath.string());
    }
    return packed;
}

bool ImageGateway::verify(const CatalogEntry& entry) const {
    try {
        auto packed = packedImage(entry);
        if (!fs::exists(packed.path)) {
            return false;
        }
        if (packed.format == imagefs::PackFormat::Archive) {
            return imagefs::computeArchiveId(packed.path, packed.config) == entry.imageId;
        }
        auto meta = json::parse(fsutil::readFile(metaPathFor(entry.packPath)));
        return meta.value("packSha256", "") == sha256HexOfFile(packed.path);
    } catch (const std::exception&) {
        return false;
    }
}

}
