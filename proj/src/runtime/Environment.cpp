#include "hpcrun/runtime/Environment.hpp"

extern char** environ;

namespace hpcrun::runtime {

std::vector<std::string> ContainerEnv::toEnvp() const {
    std::vector<std::string> envp;
    envp.reserve(variables.size());
    for (const auto& [key, value] : variables) {
        envp.push_back(key + "=" + value);
    }
    return envp;
}

ContainerEnv mergeEnvironment(const std::vector<std::string>& imageEnv,
                              const std::map<std::string, std::string>& hostEnv, const config::SiteConfig& site,
                              const std::vector<EnvAdjustment>& adjustments) {
    ContainerEnv env;
    auto set = [&](const std::string& key, const std::string& value, EnvTier tier) {
        env.variables[key] = value;
        env.origin[key] = tier;
    };
    for (const auto& entry : imageEnv) {
        auto eq = entry.find('=');
        if (eq == std::string::npos || eq == 0) {
            env.warnings.push_back("ignoring malformed image environment entry '" + entry + "'");
            continue;
        }
        set(entry.substr(0, eq), entry.substr(eq + 1), EnvTier::Image);
    }
    for (const auto& key : site.envPassthrough) {
        if (auto it = hostEnv.find(key); it != hostEnv.end()) {
            set(key, it->second, EnvTier::HostPassthrough);
        }
    }
    for (const auto& [key, value] : site.envForce) {
        set(key, value, EnvTier::SiteForce);
    }
    for (const auto& adjustment : adjustments) {
        auto value = adjustment.value;
        if (adjustment.mode == EnvAdjustment::Mode::PrependPath) {
            if (auto it = env.variables.find(adjustment.key); it != env.variables.end() && !it->second.empty()) {
                value += ":" + it->second;
            }
        }
        set(adjustment.key, value, EnvTier::Injector);
    }
    return env;
}

std::map<std::string, std::string> currentEnvironment() {
    std::map<std::string, std::string> env;
    for (char** entry = environ; entry && *entry; ++entry) {
        std::string text(*entry);
        auto eq = text.find('=');
        if (eq != std::string::npos && eq > 0) {
            env.emplace(text.substr(0, eq), text.substr(eq + 1));
        }
    }
    return env;
}

}
