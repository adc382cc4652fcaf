#include "hpcrun/mpi/MpiInjector.hpp"

#include <algorithm>
#include <charconv>
#include <set>

#include "hpcrun/common/Elf.hpp"
#include "hpcrun/common/Error.hpp"
#include "hpcrun/common/Path.hpp"

namespace hpcrun::mpi {

namespace {

[[noreturn]] void unparseable(std::string_view text, const std::string& why) {
    throw Error(ErrorCode::UnparseableAbi, "cannot read ABI version from '" + std::string(text) + "': " + why);
}

std::vector<std::string_view> split(std::string_view text, char separator) {
    std::vector<std::string_view> parts;
    size_t start = 0;
    while (true) {
        auto pos = text.find(separator, start);
        parts.push_back(text.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
        if (pos == std::string_view::npos) {
            return parts;
        }
        start = pos + 1;
    }
}

bool toNumber(std::string_view text, unsigned& value) {
    if (text.empty() || text.size() > 6) {
        return false;
    }
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    return ec == std::errc() && ptr == text.data() + text.size();
}

/// "libmpi.so.12.0.5" -> {"libmpi", "12.0.5"}
std::pair<std::string, std::string> splitSharedObjectName(std::string_view name) {
    auto so = name.find(".so");
    if (so == std::string_view::npos || so == 0) {
        return {};
    }
    auto rest = name.substr(so + 3);
    if (!rest.empty() && rest.front() != '.') {
        return {};
    }
    return {std::string(name.substr(0, so)), std::string(rest.empty() ? rest : rest.substr(1))};
}

std::string baseOf(const std::string& fileName) {
    return splitSharedObjectName(fileName).first;
}

bool isFrontend(const std::string& base) {
    return std::find(frontendNames.begin(), frontendNames.end(), base) != frontendNames.end();
}

}

std::string AbiVersion::triple() const {
    return std::to_string(current) + ":" + std::to_string(revision) + ":" + std::to_string(age);
}

AbiVersion parseAbiVersion(std::string_view text) {
    AbiVersion version;
    if (text.find(':') != std::string_view::npos) {
        auto parts = split(text, ':');
        if (parts.size() != 3 || !toNumber(parts[0], version.current) || !toNumber(parts[1], version.revision) ||
            !toNumber(parts[2], version.age)) {
            unparseable(text, "expected current:revision:age");
        }
        if (version.age > version.current) {
            unparseable(text, "age exceeds current");
        }
        return version;
    }
    auto fileName = fs::path(std::string(text)).filename().string();
    auto [base, suffix] = splitSharedObjectName(fileName);
    if (base.empty()) {
        unparseable(text, "not a shared object name");
    }
    if (suffix.empty()) {
        unparseable(text, "unversioned shared object");
    }
    auto parts = split(suffix, '.');
    unsigned numbers[3] = {0, 0, 0};
    if (parts.size() > 3) {
        unparseable(text, "too many version components");
    }
    for (size_t i = 0; i < parts.size(); ++i) {
        if (!toNumber(parts[i], numbers[i])) {
            unparseable(text, "non-numeric version component");
        }
    }
    // libtool on Linux names files lib<base>.so.<current-age>.<age>.<revision>.
    version.base = base;
    version.age = numbers[1];
    version.revision = numbers[2];
    version.current = numbers[0] + numbers[1];
    return version;
}

AbiVersion libraryAbiVersion(const fs::path& root, const std::string& containerPath) {
    fs::path hostPath;
    if (root.empty()) {
        std::error_code ec;
        hostPath = fs::canonical(containerPath, ec);
        if (ec) {
            hostPath = containerPath;
        }
    } else {
        hostPath = path::resolveInRoot(root, containerPath);
    }
    auto realName = hostPath.filename().string();
    auto soname = elf::readSoname(hostPath);
    if (!soname) {
        // No embedded metadata: the file name is all there is.
        try {
            return parseAbiVersion(realName);
        } catch (const Error&) {
            return parseAbiVersion(fs::path(containerPath).filename().string());
        }
    }
    auto fromSoname = parseAbiVersion(*soname);
    try {
        auto fromFile = parseAbiVersion(realName);
        if (fromFile.base == fromSoname.base && fromFile.current - fromFile.age == fromSoname.current) {
            return fromFile;
        }
    } catch (const Error&) {
    }
    return fromSoname;
}

AbiVerdict checkAbiCompatibility(const AbiVersion& container, const AbiVersion& host) {
    if (!container.base.empty() && !host.base.empty() && container.base != host.base) {
        throw Error(ErrorCode::BaseNameMismatch,
                    "cannot compare " + container.base + " with " + host.base);
    }
    AbiVerdict verdict;
    verdict.compatible = host.lowest() <= container.current && container.current <= host.current;
    if (!verdict.compatible) {
        auto base = container.base.empty() ? host.base : container.base;
        verdict.diagnostic = "mpi-abi: container " + base + " interface " + std::to_string(container.current) +
                             " not provided by host range [" + std::to_string(host.lowest()) + "," +
                             std::to_string(host.current) + "]";
    }
    return verdict;
}

HostMpiConfig hostMpiConfigFrom(const config::HostMpiSettings& settings) {
    HostMpiConfig host;
    for (const auto& [base, libraryPath] : settings.frontends) {
        AbiVersion version;
        if (auto it = settings.abiOverrides.find(base); it != settings.abiOverrides.end()) {
            version = parseAbiVersion(it->second);
        } else {
            version = libraryAbiVersion({}, libraryPath);
        }
        version.base = base;
        host.frontends[base] = {libraryPath, version};
    }
    host.dependencies = settings.dependencies;
    host.configPaths = settings.configPaths;
    return host;
}

ContainerMpiScan scanContainerMpi(const fs::path& root, const std::string& imageLibraryPath) {
    ContainerMpiScan scan;
    std::set<std::string> seen;
    auto addRoot = [&](const std::string& dir) {
        auto normalized = path::normalizeAbsolute(dir);
        if (normalized && seen.insert(*normalized).second) {
            scan.scanRoots.push_back(*normalized);
        }
    };
    for (auto part : split(imageLibraryPath, ':')) {
        if (!part.empty()) {
            addRoot(std::string(part));
        }
    }
    for (const auto& dir : standardLibraryDirs) {
        addRoot(dir);
    }

    // base -> host real path of the winning copy
    std::map<std::string, fs::path> winners;
    std::error_code ec;
    for (const auto& dir : scan.scanRoots) {
        auto hostDir = path::resolveInRoot(root, dir);
        if (!fs::is_directory(hostDir, ec)) {
            continue;
        }
        // Per directory and base, prefer the file named like its soname.
        std::map<std::string, std::vector<std::string>> candidates;
        for (const auto& entry : fs::directory_iterator(hostDir, ec)) {
            auto name = entry.path().filename().string();
            auto base = baseOf(name);
            if (isFrontend(base) && name.size() > base.size() + 3) {
                candidates[base].push_back(name);
            }
        }
        for (auto& [base, names] : candidates) {
            std::sort(names.begin(), names.end());
            std::string chosen;
            for (const auto& name : names) {
                auto resolved = path::resolveInRoot(root, dir + "/" + name);
                if (!fs::is_regular_file(resolved, ec)) {
                    continue;
                }
                if (chosen.empty()) {
                    chosen = name;
                }
                if (auto soname = elf::readSoname(resolved); soname && *soname == name) {
                    chosen = name;
                    break;
                }
            }
            if (chosen.empty()) {
                continue;
            }
            auto containerPath = dir + "/" + chosen;
            auto real = fs::weakly_canonical(path::resolveInRoot(root, containerPath), ec);
            if (auto it = winners.find(base); it != winners.end()) {
                if (it->second != real) {
                    scan.warnings.push_back("mpi: ignoring " + containerPath + ", " + base + " already found at " +
                                            scan.found[base].containerPath);
                }
                continue;
            }
            AbiVersion version;
            try {
                version = libraryAbiVersion(root, containerPath);
            } catch (const Error& e) {
                scan.warnings.push_back(std::string("mpi: ") + e.what());
                continue;
            }
            version.base = base;
            winners[base] = real;
            scan.found[base] = {containerPath, version};
        }
    }
    return scan;
}

MpiInjectionPlan planMpiInjection(const ContainerMpiScan& scan, const HostMpiConfig& host) {
    if (scan.found.count("libmpi") == 0) {
        throw Error(ErrorCode::NoContainerMpi, "mpi: --mpi given but the image has no libmpi on its loader path");
    }
    MpiInjectionPlan plan;
    for (const char* base : frontendNames) {
        if (scan.found.count(base) == 0) {
            plan.warnings.push_back(std::string("mpi: image has no ") + base + ", not swapped");
        }
    }
    for (const auto& [base, library] : scan.found) {
        auto hostFrontend = host.frontends.find(base);
        if (hostFrontend == host.frontends.end()) {
            throw Error(ErrorCode::AbiIncompatible, "mpi-abi: host provides no " + base);
        }
        auto verdict = checkAbiCompatibility(library.version, hostFrontend->second.version);
        if (!verdict.compatible) {
            throw Error(ErrorCode::AbiIncompatible, verdict.diagnostic);
        }
        plan.libraryOvermounts.push_back({hostFrontend->second.path, library.containerPath,
                                          runtime::MountKind::BindFile, false, runtime::MountOrigin::MpiFrontend});
    }
    std::error_code ec;
    for (const auto& dependency : host.dependencies) {
        auto kind = fs::is_directory(dependency, ec) ? runtime::MountKind::BindDir : runtime::MountKind::BindFile;
        plan.dependencyMounts.push_back({dependency,
                                         std::string(containerDependencyDir) + "/" +
                                             fs::path(dependency).filename().string(),
                                         kind, false, runtime::MountOrigin::MpiDependency});
    }
    for (const auto& configPath : host.configPaths) {
        auto kind = fs::is_directory(configPath, ec) ? runtime::MountKind::BindDir : runtime::MountKind::BindFile;
        auto target = path::normalizeAbsolute(configPath).value_or(configPath);
        plan.configMounts.push_back({configPath, target, kind, false, runtime::MountOrigin::MpiConfig});
    }
    if (!plan.dependencyMounts.empty()) {
        plan.env.push_back({"LD_LIBRARY_PATH", containerDependencyDir, runtime::EnvAdjustment::Mode::PrependPath});
    }
    return plan;
}

}
