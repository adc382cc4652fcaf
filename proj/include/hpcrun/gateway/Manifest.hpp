#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hpcrun/gateway/ImageReference.hpp"
#include "hpcrun/imagefs/ImageConfig.hpp"

namespace hpcrun::gateway {

struct LayerDescriptor {
    std::string digest;
    uint64_t size = 0;
    std::string mediaType;
};

struct ImageManifest {
    ImageReference reference;
    /// bottom-most first
    std::vector<LayerDescriptor> layers;
    imagefs::ImageConfig config;
    LayerDescriptor configBlob;
    /// digest of the manifest document itself
    std::string digest;
};

/// Reads layers and the config descriptor from a registry image manifest
/// (docker schema 2 or OCI). Throws Error(ManifestNotFound) when the document
/// is not a single-image manifest with at least one layer and unique layer digests.
ImageManifest parseRegistryManifest(const nlohmann::json& doc, const ImageReference& reference);

void validateLayers(const std::vector<LayerDescriptor>& layers, const std::string& context);

/// "sha256:<hex>" -> "<hex>"; throws DigestMismatch for unsupported algorithms.
std::string sha256HexOfDigest(const std::string& digest);

}
