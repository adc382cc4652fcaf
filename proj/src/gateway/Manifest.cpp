#include "hpcrun/gateway/Manifest.hpp"

#include <set>

#include "hpcrun/common/Error.hpp"

namespace hpcrun::gateway {

void validateLayers(const std::vector<LayerDescriptor>& layers, const std::string& context) {
    if (layers.empty()) {
        throw Error(ErrorCode::ManifestNotFound, context + ": manifest lists no layers");
    }
    std::set<std::string> seen;
    for (const auto& layer : layers) {
        if (!seen.insert(layer.digest).second) {
            throw Error(ErrorCode::ManifestNotFound, context + ": duplicate layer digest " + layer.digest);
        }
    }
}

ImageManifest parseRegistryManifest(const nlohmann::json& doc, const ImageReference& reference) {
    auto context = reference.render();
    if (!doc.is_object() || !doc.contains("layers") || !doc["layers"].is_array() || !doc.contains("config")) {
        throw Error(ErrorCode::ManifestNotFound, context + ": unsupported manifest document");
    }
    ImageManifest manifest;
    manifest.reference = reference;
    try {
        const auto& config = doc.at("config");
        manifest.configBlob.digest = config.at("digest").get<std::string>();
        manifest.configBlob.size = config.value("size", uint64_t{0});
        manifest.configBlob.mediaType = config.value("mediaType", std::string());
        for (const auto& layer : doc.at("layers")) {
            LayerDescriptor descriptor;
            descriptor.digest = layer.at("digest").get<std::string>();
            descriptor.size = layer.value("size", uint64_t{0});
            descriptor.mediaType = layer.value("mediaType", std::string());
            manifest.layers.push_back(std::move(descriptor));
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::ManifestNotFound, context + ": malformed manifest: " + e.what());
    }
    validateLayers(manifest.layers, context);
    return manifest;
}

std::string sha256HexOfDigest(const std::string& digest) {
    constexpr std::string_view prefix = "sha256:";
    if (digest.rfind(prefix, 0) != 0 || digest.size() != prefix.size() + 64) {
        throw Error(ErrorCode::DigestMismatch, "unsupported digest " + digest);
    }
    return digest.substr(prefix.size());
}

}
