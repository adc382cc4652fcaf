#include "hpcrun/gateway/RegistryClient.hpp"

#include <fstream>
#include <regex>

#include <httplib.h>

#include "hpcrun/common/Error.hpp"
#include "hpcrun/common/Hash.hpp"

namespace hpcrun::gateway {

namespace {

constexpr const char* manifestAccept =
    "application/vnd.docker.distribution.manifest.v2+json, "
    "application/vnd.oci.image.manifest.v1+json, "
    "application/vnd.docker.distribution.manifest.list.v2+json, "
    "application/vnd.oci.image.index.v1+json";

bool isDockerHub(const std::string& registry) {
    return registry == "registry-1.docker.io" || registry == "docker.io" || registry == "index.docker.io";
}

std::map<std::string, std::string> parseChallenge(const std::string& header) {
    std::map<std::string, std::string> params;
    static const std::regex param(R"re((\w+)="([^"]*)")re");
    for (auto it = std::sregex_iterator(header.begin(), header.end(), param); it != std::sregex_iterator(); ++it) {
        params[(*it)[1]] = (*it)[2];
    }
    return params;
}

std::pair<std::string, std::string> splitUrl(const std::string& url) {
    auto schemeEnd = url.find("://");
    auto pathStart = url.find('/', schemeEnd == std::string::npos ? 0 : schemeEnd + 3);
    if (pathStart == std::string::npos) {
        return {url, "/"};
    }
    return {url.substr(0, pathStart), url.substr(pathStart)};
}

std::unique_ptr<httplib::Client> makeClient(const std::string& base) {
    auto client = std::make_unique<httplib::Client>(base);
    client->set_follow_location(true);
    client->set_connection_timeout(10);
    client->set_read_timeout(120);
    return client;
}

std::string pickPlatformManifest(const nlohmann::json& index, const std::string& context) {
    for (const auto& entry : index.value("manifests", nlohmann::json::array())) {
        auto platform = entry.value("platform", nlohmann::json::object());
        if (platform.value("os", "") == "linux" && platform.value("architecture", "") == "amd64") {
            return entry.value("digest", "");
        }
    }
    throw Error(ErrorCode::ManifestNotFound, context + ": no linux/amd64 manifest in image index");
}

}

RegistryClient::RegistryClient(std::string baseUrl) : baseUrl_(std::move(baseUrl)) {
    while (!baseUrl_.empty() && baseUrl_.back() == '/') {
        baseUrl_.pop_back();
    }
}

std::string RegistryClient::remoteRepository(const ImageReference& ref) {
    if (isDockerHub(ref.registry) && ref.repository.find('/') == std::string::npos) {
        return "library/" + ref.repository;
    }
    return ref.repository;
}

std::string RegistryClient::baseFor(const ImageReference& ref) const {
    if (!baseUrl_.empty()) {
        return baseUrl_;
    }
    if (ref.registry == "docker.io" || ref.registry == "index.docker.io") {
        return "https://registry-1.docker.io";
    }
    return "https://" + ref.registry;
}

std::string RegistryClient::requestToken(const std::string& challenge) {
    auto params = parseChallenge(challenge);
    auto realm = params["realm"];
    if (realm.empty()) {
        throw Error(ErrorCode::RegistryUnreachable, "registry requested authentication without a token realm");
    }
    std::lock_guard lock(tokenMutex_);
    auto cacheKey = realm + " " + params["scope"];
    if (auto it = tokens_.find(cacheKey); it != tokens_.end()) {
        return it->second;
    }
    auto [host, path] = splitUrl(realm);
    httplib::Params query;
    if (!params["service"].empty()) {
        query.emplace("service", params["service"]);
    }
    if (!params["scope"].empty()) {
        query.emplace("scope", params["scope"]);
    }
    auto client = makeClient(host);
    auto result = client->Get(path, query, httplib::Headers{});
    if (!result) {
        throw Error(ErrorCode::RegistryUnreachable, "token service " + realm + ": " + httplib::to_string(result.error()));
    }
    if (result->status != 200) {
        throw Error(ErrorCode::RegistryUnreachable,
                    "token service " + realm + " answered HTTP " + std::to_string(result->status));
    }
    std::string token;
    try {
        auto doc = nlohmann::json::parse(result->body);
        token = doc.value("token", doc.value("access_token", std::string()));
    } catch (const nlohmann::json::exception&) {
    }
    if (token.empty()) {
        throw Error(ErrorCode::RegistryUnreachable, "token service " + realm + " returned no token");
    }
    tokens_[cacheKey] = token;
    return token;
}

RegistryClient::Response RegistryClient::get(const ImageReference& ref, const std::string& path,
                                             const std::map<std::string, std::string>& headers,
                                             const std::function<bool(const char*, size_t)>& sink) {
    auto base = baseFor(ref);
    std::string token;
    for (int attempt = 0; attempt < 2; ++attempt) {
        auto client = makeClient(base);
        httplib::Headers requestHeaders(headers.begin(), headers.end());
        if (!token.empty()) {
            requestHeaders.emplace("Authorization", "Bearer " + token);
        }
        Response response;
        httplib::Result result;
        if (sink) {
            result = client->Get(
                path, requestHeaders,
                [&](const httplib::Response& r) {
                    response.status = r.status;
                    return true;
                },
                [&](const char* data, size_t length) {
                    // Error bodies (401/404) are collected, not streamed to the sink.
                    if (response.status != 200) {
                        response.body.append(data, length);
                        return true;
                    }
                    return sink(data, length);
                });
        } else {
            result = client->Get(path, requestHeaders);
        }
        if (!result) {
            if (sink && result.error() == httplib::Error::Canceled) {
                response.status = -1;
                return response;
            }
            throw Error(ErrorCode::RegistryUnreachable, base + path + ": " + httplib::to_string(result.error()));
        }
        response.status = result->status;
        if (!sink) {
            response.body = result->body;
        }
        for (const auto& [name, value] : result->headers) {
            response.headers[name] = value;
        }
        if (response.status == 401 && attempt == 0) {
            auto challenge = result->get_header_value("WWW-Authenticate");
            if (challenge.rfind("Bearer", 0) == 0) {
                token = requestToken(challenge);
                continue;
            }
        }
        return response;
    }
    throw Error(ErrorCode::RegistryUnreachable, base + path + ": authorization refused");
}

ImageManifest RegistryClient::fetchManifest(const ImageReference& ref) {
    auto context = ref.render();
    auto repo = remoteRepository(ref);
    std::string reference = ref.digest.empty() ? ref.tag : ref.digest;
    nlohmann::json doc;
    std::string manifestDigest;
    for (int depth = 0; depth < 2; ++depth) {
        auto response = get(ref, "/v2/" + repo + "/manifests/" + reference, {{"Accept", manifestAccept}});
        if (response.status == 404 || response.status == 401 || response.status == 403) {
            throw Error(ErrorCode::ManifestNotFound,
                        context + ": manifest not found (HTTP " + std::to_string(response.status) + ")");
        }
        if (response.status != 200) {
            throw Error(ErrorCode::RegistryUnreachable,
                        context + ": manifest request answered HTTP " + std::to_string(response.status));
        }
        manifestDigest = "sha256:" + sha256Hex(response.body);
        if (reference.rfind("sha256:", 0) == 0 && reference != manifestDigest) {
            throw Error(ErrorCode::DigestMismatch, context + ": manifest content does not match " + reference);
        }
        try {
            doc = nlohmann::json::parse(response.body);
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorCode::ManifestNotFound, context + ": manifest is not valid JSON");
        }
        if (doc.contains("manifests") && !doc.contains("layers")) {
            reference = pickPlatformManifest(doc, context);
            continue;
        }
        break;
    }
    auto manifest = parseRegistryManifest(doc, ref);
    manifest.digest = manifestDigest;
    return manifest;
}

void RegistryClient::fetchConfig(ImageManifest& manifest) {
    auto configBytes = fetchBlobBytes(manifest.reference, manifest.configBlob.digest);
    try {
        manifest.config = imagefs::imageConfigFromRegistryBlob(nlohmann::json::parse(configBytes));
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::ManifestNotFound, manifest.reference.render() + ": image configuration is not valid JSON");
    }
}

std::string RegistryClient::fetchBlobBytes(const ImageReference& ref, const std::string& digest) {
    auto expected = sha256HexOfDigest(digest);
    auto response = get(ref, "/v2/" + remoteRepository(ref) + "/blobs/" + digest, {});
    if (response.status == 404) {
        throw Error(ErrorCode::ManifestNotFound, ref.render() + ": blob " + digest + " not found");
    }
    if (response.status != 200) {
        throw Error(ErrorCode::RegistryUnreachable,
                    ref.render() + ": blob request answered HTTP " + std::to_string(response.status));
    }
    if (sha256Hex(response.body) != expected) {
        throw Error(ErrorCode::DigestMismatch, ref.render() + ": blob " + digest + " failed verification");
    }
    return response.body;
}

void RegistryClient::fetchBlob(const ImageReference& ref, const std::string& digest, const fs::path& dest) {
    auto expected = sha256HexOfDigest(digest);
    std::ofstream out(dest, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw Error(ErrorCode::StorageFull, "cannot create " + dest.string());
    }
    Sha256 hash;
    bool writeFailed = false;
    auto response = get(ref, "/v2/" + remoteRepository(ref) + "/blobs/" + digest, {},
                        [&](const char* data, size_t length) {
                            hash.update(std::string_view(data, length));
                            out.write(data, static_cast<std::streamsize>(length));
                            writeFailed = !out;
                            return !writeFailed;
                        });
    out.close();
    auto discard = [&] { std::error_code ec; fs::remove(dest, ec); };
    if (writeFailed || !out) {
        discard();
        throw Error(ErrorCode::StorageFull, "writing " + dest.string() + " failed");
    }
    if (response.status == 404) {
        discard();
        throw Error(ErrorCode::ManifestNotFound, ref.render() + ": blob " + digest + " not found");
    }
    if (response.status != 200) {
        discard();
        throw Error(ErrorCode::RegistryUnreachable,
                    ref.render() + ": blob request answered HTTP " + std::to_string(response.status));
    }
    if (hash.hexDigest() != expected) {
        discard();
        throw Error(ErrorCode::DigestMismatch, ref.render() + ": layer " + digest + " failed verification");
    }
}

}
