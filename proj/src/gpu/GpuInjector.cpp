#include "hpcrun/gpu/GpuInjector.hpp"

#include <algorithm>
#include <fstream>
#include <regex>
#include <set>

#include <nlohmann/json.hpp>

#include "hpcrun/common/Elf.hpp"
#include "hpcrun/common/Error.hpp"
#include "hpcrun/common/Filesystem.hpp"

namespace hpcrun::gpu {

namespace {

bool isDecimal(std::string_view token) {
    return !token.empty() && std::all_of(token.begin(), token.end(), [](char c) { return c >= '0' && c <= '9'; });
}

bool isUuid(std::string_view token) {
    if (token.size() <= 4 || token.substr(0, 4) != "GPU-") {
        return false;
    }
    return std::all_of(token.begin() + 4, token.end(), [](char c) {
        return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'f') || (c >= 'A' && c <= 'F') || c == '-';
    });
}

std::string libraryTargetName(const std::string& hostPath) {
    if (auto soname = elf::readSoname(hostPath)) {
        return *soname;
    }
    return fs::path(hostPath).filename().string();
}

std::string joinIndices(size_t n) {
    std::string out;
    for (size_t i = 0; i < n; ++i) {
        out += (i ? "," : "") + std::to_string(i);
    }
    return out;
}

}

std::optional<GpuVisibilitySpec> parseVisibleDevices(std::string_view raw) {
    if (raw.empty()) {
        return std::nullopt;
    }
    GpuVisibilitySpec spec;
    spec.raw = std::string(raw);
    std::set<unsigned> indices;
    std::set<std::string> uuids;
    size_t start = 0;
    while (true) {
        auto comma = raw.find(',', start);
        auto token = raw.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start);
        DeviceSelector selector;
        if (isDecimal(token)) {
            auto digits = token.substr(std::min(token.find_first_not_of('0'), token.size() - 1));
            if (digits.size() > 9) {
                // Well-formed, but no host has that many devices.
                return std::nullopt;
            }
            selector.kind = DeviceSelector::Kind::Index;
            selector.index = static_cast<unsigned>(std::stoul(std::string(digits)));
            if (!indices.insert(selector.index).second) {
                return std::nullopt;
            }
        } else if (isUuid(token)) {
            selector.kind = DeviceSelector::Kind::Uuid;
            selector.uuid = std::string(token);
            if (!uuids.insert(selector.uuid).second) {
                return std::nullopt;
            }
        } else {
            return std::nullopt;
        }
        spec.entries.push_back(std::move(selector));
        if (comma == std::string_view::npos) {
            break;
        }
        start = comma + 1;
    }
    return spec;
}

TriggerDecision detectTrigger(const std::map<std::string, std::string>& hostEnv,
                              const std::optional<HostGpuInventory>& inventory) {
    TriggerDecision decision;
    auto it = hostEnv.find(visibleDevicesVariable);
    if (it == hostEnv.end()) {
        decision.reason = "CUDA_VISIBLE_DEVICES not set";
        return decision;
    }
    auto spec = parseVisibleDevices(it->second);
    if (!spec) {
        decision.reason = "CUDA_VISIBLE_DEVICES is not a valid device list";
        return decision;
    }
    if (!inventory || inventory->devices.empty()) {
        decision.reason = "no GPU devices on this host";
        return decision;
    }
    // A uuid and an index naming the same device are a duplicate too.
    std::set<unsigned> resolved;
    for (const auto& selector : spec->entries) {
        auto device = std::find_if(inventory->devices.begin(), inventory->devices.end(), [&](const GpuDevice& d) {
            return selector.kind == DeviceSelector::Kind::Index ? d.index == selector.index : d.uuid == selector.uuid;
        });
        if (device == inventory->devices.end()) {
            decision.reason = "CUDA_VISIBLE_DEVICES names a device this host does not have";
            return decision;
        }
        if (!resolved.insert(device->index).second) {
            decision.reason = "CUDA_VISIBLE_DEVICES names a device twice";
            return decision;
        }
    }
    decision.enabled = true;
    decision.spec = std::move(spec);
    return decision;
}

GpuInjectionPlan planGpuInjection(const GpuVisibilitySpec& spec, const HostGpuInventory& inventory) {
    GpuInjectionPlan plan;
    for (const auto& selector : spec.entries) {
        auto device = std::find_if(inventory.devices.begin(), inventory.devices.end(), [&](const GpuDevice& d) {
            return selector.kind == DeviceSelector::Kind::Index ? d.index == selector.index : d.uuid == selector.uuid;
        });
        if (device == inventory.devices.end()) {
            auto name = selector.kind == DeviceSelector::Kind::Index ? std::to_string(selector.index) : selector.uuid;
            throw Error(ErrorCode::MissingDeviceFile, "GPU device " + name + " is not in the host inventory");
        }
        std::error_code ec;
        if (!fs::exists(device->path, ec)) {
            throw Error(ErrorCode::MissingDeviceFile,
                        "GPU device " + std::to_string(device->index) + ": " + device->path + " does not exist");
        }
        auto containerIndex = static_cast<unsigned>(plan.renumber.size());
        plan.renumber.emplace_back(device->index, containerIndex);
        plan.deviceMounts.push_back({device->path, device->path, runtime::MountKind::Device, true,
                                     runtime::MountOrigin::GpuDevice});
    }
    for (const char* name : driverLibraries) {
        auto it = inventory.libraries.find(name);
        std::error_code ec;
        if (it == inventory.libraries.end() || !fs::is_regular_file(it->second, ec)) {
            throw Error(ErrorCode::MissingDriverLibrary, std::string("GPU driver library ") + name + " not found");
        }
        plan.libraryMounts.push_back({it->second, std::string(containerLibraryDir) + "/" + libraryTargetName(it->second),
                                      runtime::MountKind::BindFile, false, runtime::MountOrigin::GpuLibrary});
    }
    std::error_code ec;
    if (!inventory.smi || !fs::is_regular_file(*inventory.smi, ec)) {
        throw Error(ErrorCode::MissingDriverLibrary, "GPU management binary nvidia-smi not found");
    }
    plan.binaryMounts.push_back({*inventory.smi, std::string(containerBinaryDir) + "/nvidia-smi",
                                 runtime::MountKind::BindFile, false, runtime::MountOrigin::GpuBinary});
    using Mode = runtime::EnvAdjustment::Mode;
    plan.env.push_back({"LD_LIBRARY_PATH", containerLibraryDir, Mode::PrependPath});
    plan.env.push_back({"PATH", containerBinaryDir, Mode::PrependPath});
    plan.env.push_back({visibleDevicesVariable, joinIndices(plan.renumber.size()), Mode::Set});
    return plan;
}

HostGpuInventory loadMockInventory(const fs::path& file) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(fsutil::readFile(file));
    } catch (const std::exception& e) {
        throw Error(ErrorCode::ValidationError, "gpu.mock_inventory: cannot read " + file.string() + ": " + e.what());
    }
    HostGpuInventory inventory;
    try {
        std::set<unsigned> indices;
        std::set<std::string> uuids;
        for (const auto& item : doc.value("devices", nlohmann::json::array())) {
            GpuDevice device{item.at("index").get<unsigned>(), item.value("uuid", ""), item.at("path").get<std::string>()};
            if (!indices.insert(device.index).second || (!device.uuid.empty() && !uuids.insert(device.uuid).second)) {
                throw Error(ErrorCode::ValidationError, "gpu.mock_inventory: duplicate device in " + file.string());
            }
            inventory.devices.push_back(std::move(device));
        }
        auto libraries = doc.value("libraries", nlohmann::json::object());
        for (const auto& [name, value] : libraries.items()) {
            inventory.libraries[name] = value.get<std::string>();
        }
        if (doc.contains("smi") && doc["smi"].is_string()) {
            inventory.smi = doc["smi"].get<std::string>();
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::ValidationError, "gpu.mock_inventory: malformed " + file.string() + ": " + e.what());
    }
    std::sort(inventory.devices.begin(), inventory.devices.end(),
              [](const GpuDevice& a, const GpuDevice& b) { return a.index < b.index; });
    for (size_t i = 0; i < inventory.devices.size(); ++i) {
        if (inventory.devices[i].index != i) {
            throw Error(ErrorCode::ValidationError, "gpu.mock_inventory: device indices must be dense from 0");
        }
    }
    return inventory;
}

HostGpuInventory probeHostInventory(const config::GpuSettings& settings) {
    if (settings.mockInventory) {
        return loadMockInventory(*settings.mockInventory);
    }
    HostGpuInventory inventory;
    std::error_code ec;
    if (settings.deviceDir) {
        // Minor number -> uuid, as reported by the loaded driver.
        std::map<unsigned, std::string> uuidByMinor;
        static const std::regex minorLine(R"(Device Minor:\s*(\d+))");
        static const std::regex uuidLine(R"(GPU UUID:\s*(\S+))");
        for (const auto& gpu : fs::directory_iterator("/proc/driver/nvidia/gpus", ec)) {
            std::ifstream info(gpu.path() / "information");
            std::string text((std::istreambuf_iterator<char>(info)), std::istreambuf_iterator<char>());
            std::smatch minor, uuid;
            if (std::regex_search(text, minor, minorLine) && std::regex_search(text, uuid, uuidLine)) {
                uuidByMinor[static_cast<unsigned>(std::stoul(minor[1]))] = uuid[1];
            }
        }
        static const std::regex deviceName(R"(nvidia(\d+))");
        std::map<unsigned, std::string> byMinor;
        for (const auto& entry : fs::directory_iterator(*settings.deviceDir, ec)) {
            std::smatch match;
            auto name = entry.path().filename().string();
            if (std::regex_match(name, match, deviceName)) {
                byMinor[static_cast<unsigned>(std::stoul(match[1]))] = entry.path().string();
            }
        }
        // Host indices are dense in minor-number order.
        unsigned index = 0;
        for (const auto& [minor, path] : byMinor) {
            auto uuid = uuidByMinor.count(minor) ? uuidByMinor[minor] : std::string();
            inventory.devices.push_back({index++, uuid, path});
        }
    }
    for (const char* name : driverLibraries) {
        auto preferred = std::string("lib") + name + ".so.1";
        auto prefix = std::string("lib") + name + ".so";
        for (const auto& dir : settings.libraryDirs) {
            if (fs::is_regular_file(fs::path(dir) / preferred, ec)) {
                inventory.libraries[name] = fs::canonical(fs::path(dir) / preferred, ec).string();
                break;
            }
            std::vector<std::string> candidates;
            for (const auto& entry : fs::directory_iterator(dir, ec)) {
                auto file = entry.path().filename().string();
                if (file.rfind(prefix, 0) == 0 && (file.size() == prefix.size() || file[prefix.size()] == '.') &&
                    fs::is_regular_file(entry.path(), ec)) {
                    candidates.push_back(entry.path().string());
                }
            }
            if (!candidates.empty()) {
                std::sort(candidates.begin(), candidates.end());
                inventory.libraries[name] = candidates.front();
                break;
            }
        }
    }
    for (const auto& dir : settings.smiDirs) {
        auto candidate = fs::path(dir) / "nvidia-smi";
        if (fs::is_regular_file(candidate, ec)) {
            inventory.smi = candidate.string();
            break;
        }
    }
    return inventory;
}

}
