#pragma once

#include <atomic>
#include <chrono>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "TestSupport.hpp"

namespace httplib {
class Server;
}

namespace hpcrun::testing {

/// A registry speaking the pull side of the HTTP v2 protocol on 127.0.0.1,
/// serving images built from fixture layers.
class FixtureRegistry {
public:
    FixtureRegistry();
    ~FixtureRegistry();
    FixtureRegistry(const FixtureRegistry&) = delete;
    FixtureRegistry& operator=(const FixtureRegistry&) = delete;

    /// Publishes `repository:tag` and returns the manifest digest.
    std::string addImage(const std::string& repository, const std::string& tag, const std::vector<FixtureLayer>& layers,
                         const imagefs::ImageConfig& config, bool gzipLayers = true);
    /// Publishes an image index whose linux/amd64 entry points at `targetTag`'s manifest.
    void addIndex(const std::string& repository, const std::string& tag, const std::string& targetTag);

    void start();
    void stop();

    std::string url() const;

    /// Blob requests answer only after this delay.
    void setBlobDelay(std::chrono::milliseconds delay) { blobDelay_ = delay; }
    /// Serve a damaged copy of every layer blob.
    void setCorruptBlobs(bool corrupt) { corrupt_ = corrupt; }
    /// Demand anonymous bearer tokens from /token.
    void setRequireToken(bool require) { requireToken_ = require; }

    /// Completed GET requests for one blob digest.
    int blobDownloads(const std::string& digest) const;
    int manifestRequests() const { return manifestRequests_.load(); }
    int tokenRequests() const { return tokenRequests_.load(); }
    std::vector<std::string> layerDigests(const std::string& repository, const std::string& tag) const;
    std::string configDigest(const std::string& repository, const std::string& tag) const;

private:
    struct Manifest {
        std::string body;
        std::string mediaType;
        std::vector<std::string> layers;
        std::string config;
    };

    std::unique_ptr<httplib::Server> server_;
    std::thread thread_;
    int port_ = 0;
    mutable std::mutex mutex_;
    std::map<std::string, std::string> blobs_; // digest -> bytes
    std::map<std::string, Manifest> manifests_; // "repo:tag" and "repo@digest"
    std::map<std::string, int> blobCounts_;
    std::atomic<int> manifestRequests_{0};
    std::atomic<int> tokenRequests_{0};
    std::chrono::milliseconds blobDelay_{0};
    std::atomic<bool> corrupt_{false};
    std::atomic<bool> requireToken_{false};
};

}
