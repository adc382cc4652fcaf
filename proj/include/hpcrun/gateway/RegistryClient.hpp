#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <string>

#include "hpcrun/gateway/Manifest.hpp"

namespace hpcrun::gateway {

namespace fs = std::filesystem;

/// Anonymous client for the registry HTTP v2 pull protocol.
class RegistryClient {
public:
    /// `baseUrl` replaces https://<registry> for every reference when non-empty
    /// (e.g. "http://127.0.0.1:5000").
    explicit RegistryClient(std::string baseUrl = {});

    /// Fetches and parses the manifest (config left empty).
    /// Throws RegistryUnreachable, ManifestNotFound, DigestMismatch.
    ImageManifest fetchManifest(const ImageReference& ref);

    /// Downloads and verifies the config blob into manifest.config.
    void fetchConfig(ImageManifest& manifest);

    /// Streams a blob to `dest` and verifies its digest. A damaged download
    /// leaves no file behind and throws DigestMismatch.
    void fetchBlob(const ImageReference& ref, const std::string& digest, const fs::path& dest);

    std::string fetchBlobBytes(const ImageReference& ref, const std::string& digest);

    /// Repository path as sent to the registry; Docker Hub official images live
    /// below "library/".
    static std::string remoteRepository(const ImageReference& ref);

private:
    struct Response {
        int status = 0;
        std::string body;
        std::map<std::string, std::string> headers;
    };

    std::string baseFor(const ImageReference& ref) const;
    /// GET with anonymous bearer-token negotiation. When `sink` is set the body
    /// is streamed to it instead of being collected.
    Response get(const ImageReference& ref, const std::string& path, const std::map<std::string, std::string>& headers,
                 const std::function<bool(const char*, size_t)>& sink = {});
    std::string requestToken(const std::string& challenge);

    std::string baseUrl_;
    std::mutex tokenMutex_;
    std::map<std::string, std::string> tokens_; // scope -> token
};

}
