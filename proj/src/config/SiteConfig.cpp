#include "hpcrun/config/SiteConfig.hpp"

#include <cctype>
#include <cstdlib>
#include <set>
#include <sstream>

#include "hpcrun/common/Error.hpp"
#include "hpcrun/common/Filesystem.hpp"
#include "hpcrun/common/Path.hpp"

namespace hpcrun::config {

namespace {

const std::map<std::string, std::set<std::string>> knownKeys = {
    {"gateway", {"image_store", "default_registry", "registry_url", "pack_format"}},
    {"runtime", {"work_dir", "site_mounts", "env_passthrough", "env_force"}},
    {"gpu", {"device_dir", "library_dirs", "smi_dirs", "mock_inventory"}},
    {"mpi", {"libmpi", "libmpicxx", "libmpifort", "libmpi_abi", "libmpicxx_abi", "libmpifort_abi",
             "dependencies", "config_paths"}},
};

const std::vector<std::string> mpiFrontends = {"libmpi", "libmpicxx", "libmpifort"};

std::string trim(const std::string& s) {
    auto begin = s.find_first_not_of(" \t\r");
    if (begin == std::string::npos) {
        return {};
    }
    auto end = s.find_last_not_of(" \t\r");
    return s.substr(begin, end - begin + 1);
}

[[noreturn]] void invalid(const std::string& field, const std::string& reason) {
    throw Error(ErrorCode::ValidationError, field + ": " + reason);
}

std::vector<std::string> splitList(const std::string& value) {
    std::vector<std::string> items;
    std::string current;
    bool any = false;
    for (size_t i = 0; i < value.size(); ++i) {
        char c = value[i];
        if (c == '\\' && i + 1 < value.size() && (value[i + 1] == ',' || value[i + 1] == '\\')) {
            current.push_back(value[++i]);
            any = true;
            continue;
        }
        if (c == ',') {
            items.push_back(trim(current));
            current.clear();
            continue;
        }
        current.push_back(c);
        any = true;
    }
    if (any || !items.empty()) {
        items.push_back(trim(current));
    }
    return items;
}

std::string escapeItem(const std::string& item) {
    std::string out;
    for (char c : item) {
        if (c == ',' || c == '\\') {
            out.push_back('\\');
        }
        out.push_back(c);
    }
    return out;
}

std::string joinList(const std::vector<std::string>& items) {
    std::string out;
    for (const auto& item : items) {
        if (!out.empty()) {
            out += ", ";
        }
        out += escapeItem(item);
    }
    return out;
}

bool isEnvName(const std::string& name) {
    if (name.empty() || std::isdigit(static_cast<unsigned char>(name.front()))) {
        return false;
    }
    for (char c : name) {
        if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_')) {
            return false;
        }
    }
    return true;
}

bool isAbiTriple(const std::string& value) {
    int colons = 0;
    bool digitRun = false;
    for (char c : value) {
        if (c == ':') {
            if (!digitRun) {
                return false;
            }
            ++colons;
            digitRun = false;
        } else if (std::isdigit(static_cast<unsigned char>(c))) {
            digitRun = true;
        } else {
            return false;
        }
    }
    return colons == 2 && digitRun;
}

std::string requireAbsolute(const std::string& field, const std::string& value) {
    auto normalized = path::normalizeAbsolute(value);
    if (!normalized) {
        invalid(field, "'" + value + "' is not an absolute path");
    }
    return value;
}

std::vector<std::string> nonEmptyItems(const std::string& field, const std::string& value) {
    auto items = splitList(value);
    for (const auto& item : items) {
        if (item.empty()) {
            invalid(field, "empty list item");
        }
    }
    return items;
}

SiteMount parseSiteMount(const std::string& item) {
    const std::string field = "runtime.site_mounts";
    auto first = item.find(':');
    if (first == std::string::npos) {
        invalid(field, "'" + item + "' must be host:container[:ro|rw]");
    }
    SiteMount mount;
    mount.hostPath = item.substr(0, first);
    auto rest = item.substr(first + 1);
    auto second = rest.find(':');
    std::string mode = "ro";
    if (second != std::string::npos) {
        mode = rest.substr(second + 1);
        rest = rest.substr(0, second);
    }
    if (mode != "ro" && mode != "rw") {
        invalid(field, "mount mode must be ro or rw in '" + item + "'");
    }
    mount.writable = mode == "rw";
    requireAbsolute(field, mount.hostPath);
    auto container = path::normalizeAbsolute(rest);
    if (!container) {
        invalid(field, "container path '" + rest + "' is not an absolute path inside the container");
    }
    if (*container == "/") {
        invalid(field, "container path '/' is reserved for the image root");
    }
    mount.containerPath = *container;
    return mount;
}

void applyKey(SiteConfig& config, std::optional<HostMpiSettings>& mpi, const std::string& section,
              const std::string& key, const std::string& value) {
    auto field = section + "." + key;
    if (section == "gateway") {
        if (key == "image_store") {
            config.imageStore = requireAbsolute(field, value);
        } else if (key == "default_registry") {
            if (value.empty()) {
                invalid(field, "must not be empty");
            }
            config.defaultRegistry = value;
        } else if (key == "registry_url") {
            if (value.rfind("http://", 0) != 0 && value.rfind("https://", 0) != 0) {
                invalid(field, "must start with http:// or https://");
            }
            config.registryUrl = value;
        } else if (key == "pack_format") {
            if (value != "auto" && value != "squash" && value != "archive") {
                invalid(field, "must be one of auto, squash, archive");
            }
            config.packFormat = value;
        }
    } else if (section == "runtime") {
        if (key == "work_dir") {
            config.workDir = requireAbsolute(field, value);
        } else if (key == "site_mounts") {
            for (const auto& item : nonEmptyItems(field, value)) {
                config.siteMounts.push_back(parseSiteMount(item));
            }
        } else if (key == "env_passthrough") {
            for (const auto& name : nonEmptyItems(field, value)) {
                if (!isEnvName(name)) {
                    invalid(field, "'" + name + "' is not a variable name");
                }
                config.envPassthrough.push_back(name);
            }
        } else if (key == "env_force") {
            for (const auto& item : nonEmptyItems(field, value)) {
                auto eq = item.find('=');
                if (eq == std::string::npos || !isEnvName(item.substr(0, eq))) {
                    invalid(field, "'" + item + "' must be NAME=VALUE");
                }
                config.envForce.emplace_back(item.substr(0, eq), item.substr(eq + 1));
            }
        }
    } else if (section == "gpu") {
        if (key == "device_dir") {
            config.gpu.deviceDir = requireAbsolute(field, value);
        } else if (key == "library_dirs") {
            for (const auto& dir : nonEmptyItems(field, value)) {
                config.gpu.libraryDirs.push_back(requireAbsolute(field, dir));
            }
        } else if (key == "smi_dirs") {
            for (const auto& dir : nonEmptyItems(field, value)) {
                config.gpu.smiDirs.push_back(requireAbsolute(field, dir));
            }
        } else if (key == "mock_inventory") {
            config.gpu.mockInventory = requireAbsolute(field, value);
        }
    } else if (section == "mpi") {
        if (!mpi) {
            mpi.emplace();
        }
        if (key == "dependencies") {
            for (const auto& lib : nonEmptyItems(field, value)) {
                mpi->dependencies.push_back(requireAbsolute(field, lib));
            }
        } else if (key == "config_paths") {
            for (const auto& p : nonEmptyItems(field, value)) {
                mpi->configPaths.push_back(requireAbsolute(field, p));
            }
        } else if (key.size() > 4 && key.compare(key.size() - 4, 4, "_abi") == 0) {
            if (!isAbiTriple(value)) {
                invalid(field, "'" + value + "' is not a current:revision:age triple");
            }
            mpi->abiOverrides[key.substr(0, key.size() - 4)] = value;
        } else {
            mpi->frontends[key] = requireAbsolute(field, value);
        }
    }
}

void validate(SiteConfig& config) {
    if (config.imageStore.empty()) {
        throw Error(ErrorCode::MissingRequired, "gateway.image_store: required");
    }
    std::set<std::string> targets;
    for (const auto& mount : config.siteMounts) {
        if (!targets.insert(mount.containerPath).second) {
            invalid("runtime.site_mounts", "duplicate container path " + mount.containerPath);
        }
    }
    if (config.mpi) {
        for (const auto& name : mpiFrontends) {
            if (config.mpi->frontends.count(name) == 0) {
                invalid("mpi." + name, "host frontend library path is required when [mpi] is configured");
            }
        }
        for (const auto& [name, override] : config.mpi->abiOverrides) {
            if (config.mpi->frontends.count(name) == 0) {
                invalid("mpi." + name + "_abi", "no matching frontend library");
            }
        }
        std::error_code ec;
        auto requireExists = [&ec](const std::string& field, const std::string& p) {
            if (!fs::exists(p, ec)) {
                invalid(field, "'" + p + "' does not exist");
            }
        };
        for (const auto& [name, p] : config.mpi->frontends) {
            requireExists("mpi." + name, p);
        }
        for (const auto& p : config.mpi->dependencies) {
            requireExists("mpi.dependencies", p);
        }
        for (const auto& p : config.mpi->configPaths) {
            requireExists("mpi.config_paths", p);
        }
    }
}

}

SiteConfig parseConfig(const std::string& text, const std::string& origin) {
    SiteConfig config;
    std::optional<HostMpiSettings> mpi;
    std::set<std::string> seen;
    std::string section;
    std::istringstream in(text);
    std::string raw;
    int lineNumber = 0;
    while (std::getline(in, raw)) {
        ++lineNumber;
        auto line = trim(raw);
        if (line.empty() || line.front() == '#') {
            continue;
        }
        auto where = origin + ":" + std::to_string(lineNumber) + ": ";
        if (line.front() == '[') {
            if (line.back() != ']' || line.size() < 3) {
                throw Error(ErrorCode::ParseError, where + "malformed section header '" + line + "'");
            }
            section = trim(line.substr(1, line.size() - 2));
            if (knownKeys.count(section) == 0) {
                invalid(section, "unknown section (line " + std::to_string(lineNumber) + ")");
            }
            if (section == "mpi" && !mpi) {
                mpi.emplace();
            }
            continue;
        }
        auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw Error(ErrorCode::ParseError, where + "expected 'key = value'");
        }
        if (section.empty()) {
            throw Error(ErrorCode::ParseError, where + "key outside of any section");
        }
        auto key = trim(line.substr(0, eq));
        auto value = trim(line.substr(eq + 1));
        if (key.empty()) {
            throw Error(ErrorCode::ParseError, where + "empty key");
        }
        auto field = section + "." + key;
        if (knownKeys.at(section).count(key) == 0) {
            invalid(field, "unknown key (line " + std::to_string(lineNumber) + ")");
        }
        if (!seen.insert(field).second) {
            invalid(field, "duplicate key (line " + std::to_string(lineNumber) + ")");
        }
        applyKey(config, mpi, section, key, value);
    }
    config.mpi = std::move(mpi);
    validate(config);
    return config;
}

SiteConfig loadConfig(const fs::path& path) {
    std::string text;
    try {
        text = fsutil::readFile(path);
    } catch (const Error& error) {
        throw Error(ErrorCode::ParseError, path.string() + ": cannot read configuration");
    }
    return parseConfig(text, path.string());
}

fs::path configPathFromEnvironment() {
    const char* overridePath = std::getenv(configPathVariable);
    if (overridePath != nullptr && *overridePath != '\0') {
        return overridePath;
    }
    return defaultConfigPath;
}

std::string renderConfig(const SiteConfig& config) {
    std::ostringstream out;
    out << "[gateway]\n";
    out << "image_store = " << config.imageStore << "\n";
    out << "default_registry = " << config.defaultRegistry << "\n";
    if (config.registryUrl) {
        out << "registry_url = " << *config.registryUrl << "\n";
    }
    out << "pack_format = " << config.packFormat << "\n";

    out << "\n[runtime]\n";
    out << "work_dir = " << config.workDir << "\n";
    if (!config.siteMounts.empty()) {
        std::vector<std::string> items;
        for (const auto& mount : config.siteMounts) {
            items.push_back(mount.hostPath + ":" + mount.containerPath + (mount.writable ? ":rw" : ":ro"));
        }
        out << "site_mounts = " << joinList(items) << "\n";
    }
    if (!config.envPassthrough.empty()) {
        out << "env_passthrough = " << joinList(config.envPassthrough) << "\n";
    }
    if (!config.envForce.empty()) {
        std::vector<std::string> items;
        for (const auto& [key, value] : config.envForce) {
            items.push_back(key + "=" + value);
        }
        out << "env_force = " << joinList(items) << "\n";
    }

    const auto& gpu = config.gpu;
    if (gpu.deviceDir || !gpu.libraryDirs.empty() || !gpu.smiDirs.empty() || gpu.mockInventory) {
        out << "\n[gpu]\n";
        if (gpu.deviceDir) {
            out << "device_dir = " << *gpu.deviceDir << "\n";
        }
        if (!gpu.libraryDirs.empty()) {
            out << "library_dirs = " << joinList(gpu.libraryDirs) << "\n";
        }
        if (!gpu.smiDirs.empty()) {
            out << "smi_dirs = " << joinList(gpu.smiDirs) << "\n";
        }
        if (gpu.mockInventory) {
            out << "mock_inventory = " << *gpu.mockInventory << "\n";
        }
    }

    if (config.mpi) {
        out << "\n[mpi]\n";
        for (const auto& [name, p] : config.mpi->frontends) {
            out << name << " = " << p << "\n";
        }
        for (const auto& [name, abi] : config.mpi->abiOverrides) {
            out << name << "_abi = " << abi << "\n";
        }
        if (!config.mpi->dependencies.empty()) {
            out << "dependencies = " << joinList(config.mpi->dependencies) << "\n";
        }
        if (!config.mpi->configPaths.empty()) {
            out << "config_paths = " << joinList(config.mpi->configPaths) << "\n";
        }
    }
    return out.str();
}

}
