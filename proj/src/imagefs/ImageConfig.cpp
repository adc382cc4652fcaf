#include "hpcrun/imagefs/ImageConfig.hpp"

namespace hpcrun::imagefs {

namespace {

std::optional<std::vector<std::string>> optionalArgv(const nlohmann::json& doc, const char* key) {
    auto it = doc.find(key);
    if (it == doc.end() || it->is_null()) {
        return std::nullopt;
    }
    return it->get<std::vector<std::string>>();
}

}

nlohmann::json toJson(const ImageConfig& config) {
    nlohmann::json doc;
    doc["env"] = config.env;
    doc["entrypoint"] = config.entrypoint ? nlohmann::json(*config.entrypoint) : nlohmann::json(nullptr);
    doc["cmd"] = config.cmd ? nlohmann::json(*config.cmd) : nlohmann::json(nullptr);
    doc["workdir"] = config.workdir ? nlohmann::json(*config.workdir) : nlohmann::json(nullptr);
    return doc;
}

ImageConfig imageConfigFromJson(const nlohmann::json& doc) {
    ImageConfig config;
    if (auto it = doc.find("env"); it != doc.end() && !it->is_null()) {
        config.env = it->get<std::vector<std::string>>();
    }
    config.entrypoint = optionalArgv(doc, "entrypoint");
    config.cmd = optionalArgv(doc, "cmd");
    if (auto it = doc.find("workdir"); it != doc.end() && it->is_string()) {
        config.workdir = it->get<std::string>();
    }
    return config;
}

ImageConfig imageConfigFromRegistryBlob(const nlohmann::json& blob) {
    ImageConfig config;
    auto section = blob.find("config");
    if (section == blob.end() || !section->is_object()) {
        return config;
    }
    const auto& runtime = *section;
    if (auto it = runtime.find("Env"); it != runtime.end() && it->is_array()) {
        config.env = it->get<std::vector<std::string>>();
    }
    config.entrypoint = optionalArgv(runtime, "Entrypoint");
    config.cmd = optionalArgv(runtime, "Cmd");
    if (auto it = runtime.find("WorkingDir"); it != runtime.end() && it->is_string() && !it->get<std::string>().empty()) {
        config.workdir = it->get<std::string>();
    }
    return config;
}

}
