#pragma once

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace hpcrun::imagefs {

/// Runtime metadata carried alongside an image's root tree.
struct ImageConfig {
    std::vector<std::string> env; // KEY=VALUE, in image order
    std::optional<std::vector<std::string>> entrypoint;
    std::optional<std::vector<std::string>> cmd;
    std::optional<std::string> workdir;

    bool operator==(const ImageConfig&) const = default;
};

nlohmann::json toJson(const ImageConfig& config);
ImageConfig imageConfigFromJson(const nlohmann::json& doc);

/// Reads the runtime section of a registry/OCI image configuration blob
/// ({"config": {"Env": [...], "Entrypoint": [...], ...}}).
ImageConfig imageConfigFromRegistryBlob(const nlohmann::json& blob);

}
