#pragma once

#include <map>
#include <string>
#include <vector>

#include "hpcrun/config/SiteConfig.hpp"
#include "hpcrun/runtime/MountEntry.hpp"

namespace hpcrun::runtime {

enum class EnvTier { Image = 1, HostPassthrough = 2, SiteForce = 3, Injector = 4 };

struct ContainerEnv {
    std::map<std::string, std::string> variables;
    /// The tier that produced each variable's final value.
    std::map<std::string, EnvTier> origin;
    std::vector<std::string> warnings;

    /// KEY=VALUE strings in key order.
    std::vector<std::string> toEnvp() const;
};

/// Precedence from lowest to highest: image env, host variables named in the
/// site passthrough list, site forced variables, injector adjustments. Later
/// entries win within a tier. A PrependPath adjustment puts its value in front
/// of whatever the lower tiers produced.
ContainerEnv mergeEnvironment(const std::vector<std::string>& imageEnv,
                              const std::map<std::string, std::string>& hostEnv, const config::SiteConfig& site,
                              const std::vector<EnvAdjustment>& adjustments = {});

/// Captures `environ`.
std::map<std::string, std::string> currentEnvironment();

}
