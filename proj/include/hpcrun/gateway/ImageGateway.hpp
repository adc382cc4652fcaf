#pragma once

#include <filesystem>
#include <future>
#include <map>
#include <mutex>
#include <string>
#include <vector>

#include "hpcrun/config/SiteConfig.hpp"
#include "hpcrun/gateway/Catalog.hpp"
#include "hpcrun/gateway/ImageReference.hpp"
#include "hpcrun/gateway/Manifest.hpp"
#include "hpcrun/gateway/RegistryClient.hpp"
#include "hpcrun/imagefs/Pack.hpp"

namespace hpcrun::gateway {

namespace fs = std::filesystem;

struct GatewayOptions {
    fs::path store;
    std::string defaultRegistry = config::defaultRegistry;
    std::string registryUrl;
    imagefs::PackPreference packPreference = imagefs::PackPreference::Auto;
};

GatewayOptions gatewayOptionsFrom(const config::SiteConfig& site);

/// Pulls or imports images, flattens and packs them into the store and keeps
/// the catalog. Safe to share between threads; pulls of one reference are
/// deduplicated in-process and serialized across processes by a lock file.
class ImageGateway {
public:
    explicit ImageGateway(GatewayOptions options);
    explicit ImageGateway(const config::SiteConfig& site);

    ImageReference parse(std::string_view raw) const;

    CatalogEntry pull(const ImageReference& ref);
    CatalogEntry importTarball(const fs::path& archive, const ImageReference& ref);

    /// Sorted by (repository, tag).
    std::vector<CatalogEntry> list() const;
    /// Throws Error(ImageNotFound).
    CatalogEntry lookup(const ImageReference& ref) const;

    /// Pack location, format and runtime metadata of a READY entry.
    /// Throws Error(ImageNotReady) for other states.
    imagefs::PackedImage packedImage(const CatalogEntry& entry) const;

    /// True when the entry is READY and its pack re-hashes to its image id.
    bool verify(const CatalogEntry& entry) const;

    const GatewayOptions& options() const { return options_; }

private:
    CatalogEntry deduplicated(const ImageReference& ref, const std::function<CatalogEntry()>& work);
    CatalogEntry pullLocked(const ImageReference& ref);
    CatalogEntry importLocked(const fs::path& archive, const ImageReference& ref);
    CatalogEntry publishPulling(const ImageReference& ref, const std::string& provenance,
                                const std::string& manifestDigest);
    /// Flattens, packs, writes metadata and publishes READY. `layers` are
    /// layer archives (possibly gzip), bottom first.
    CatalogEntry buildAndPublish(CatalogEntry entry, const std::vector<fs::path>& layers,
                                 const imagefs::ImageConfig& config, const fs::path& scratch);
    void markFailed(CatalogEntry entry, const std::string& message);
    fs::path lockPathFor(const ImageReference& ref) const;

    GatewayOptions options_;
    Catalog catalog_;
    RegistryClient client_;
    std::mutex inflightMutex_;
    std::map<std::string, std::shared_future<CatalogEntry>> inflight_;
};

/// Path of the metadata document next to a pack.
fs::path metaPathFor(const fs::path& packPath);

}
