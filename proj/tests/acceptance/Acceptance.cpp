// Acceptance run: one PASS/FAIL line per criterion, exit status 0 only when all pass.
#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <regex>
#include <set>
#include <sstream>
#include <thread>

#include "FixtureRegistry.hpp"
#include "TestSupport.hpp"
#include "hpcrun/common/Error.hpp"
#include "hpcrun/common/Filesystem.hpp"
#include "hpcrun/common/Hash.hpp"
#include "hpcrun/gateway/ImageGateway.hpp"
#include "hpcrun/imagefs/Flatten.hpp"
#include "hpcrun/imagefs/Pack.hpp"
#include "hpcrun/mpi/MpiInjector.hpp"
#include "hpcrun/runtime/StageTrace.hpp"

using namespace hpcrun;
using namespace hpcrun::testing;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

double secondsSince(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fixed(double value) {
    std::ostringstream out;
    out.precision(2);
    out << std::fixed << value;
    return out.str();
}

// A site directory with a config file, an image store and the toolbox images.
struct Site {
    fsutil::TempDir dir{scratchBase(), "acceptance-"};
    config::SiteConfig site = siteIn(dir.path());
    fs::path configPath = dir.path() / "config";

    void write() const { writeSite(configPath, site); }

    ProcessResult img(std::vector<std::string> args) const {
        args.insert(args.begin(), imgBinary().string());
        return runProcess(args, {{"HPCRUN_CONFIG", configPath.string()}});
    }

    ProcessResult run(std::vector<std::string> args, std::map<std::string, std::optional<std::string>> env = {},
                      const fs::path& config = {}) const {
        args.insert(args.begin(), runBinary().string());
        env["HPCRUN_CONFIG"] = (config.empty() ? configPath : config).string();
        env.emplace("CUDA_VISIBLE_DEVICES", std::nullopt);
        return runProcess(args, env);
    }

    void import(const std::string& name, const FixtureLayer& layer, const imagefs::ImageConfig& config = {}) const {
        auto archive = dir.path() / "archive.tar";
        writeSavedImage(archive, {layer}, config);
        auto result = img({"import", archive.string(), name});
        if (result.status != 0) {
            throw std::runtime_error("import of " + name + " failed: " + result.err);
        }
    }
};

imagefs::ImageConfig toolboxConfig() {
    imagefs::ImageConfig config;
    config.env = {"PATH=/bin"};
    return config;
}

// "key=value" tokens of the PREPARE event of a trace file.
std::map<std::string, std::string> prepareCounts(const fs::path& trace) {
    std::map<std::string, std::string> counts;
    for (const auto& event : runtime::StageTrace::parse(fsutil::readFile(trace))) {
        if (event.stage != runtime::Stage::Prepare) {
            continue;
        }
        std::istringstream in(event.detail);
        std::string token;
        while (in >> token) {
            auto eq = token.find('=');
            if (eq != std::string::npos) {
                counts[token.substr(0, eq)] = token.substr(eq + 1);
            }
        }
    }
    return counts;
}

std::string countOf(const std::map<std::string, std::string>& counts, const std::string& key) {
    auto it = counts.find(key);
    return it == counts.end() ? "0" : it->second;
}

Outcome osReleaseRoundTrip() {
    auto start = Clock::now();
    Site site;
    site.write();
    const std::string osRelease = "NAME=\"Acceptance Linux\"\nID=acceptance\nVERSION_ID=2.7\n"
                                  "PRETTY_NAME=\"Acceptance Linux 2.7 (round trip)\"\n";
    site.import("osrelease:1", toolboxLayer(osRelease), toolboxConfig());
    auto result = site.run({"--image=osrelease:1", "cat", "/etc/os-release"});
    auto elapsed = secondsSince(start);
    bool pass = result.status == 0 && result.out == osRelease && elapsed < 5.0;
    return {pass, "status=" + std::to_string(result.status) + " bytes=" + std::to_string(result.out.size()) + "/" +
                      std::to_string(osRelease.size()) + " " + fixed(elapsed) + "s"};
}

Outcome flattenOracle() {
    auto start = Clock::now();
    std::mt19937_64 rng(0xacc0002);
    StackShape shape;
    shape.maxLayers = 5;
    shape.maxEntries = 50;
    int matched = 0;
    std::string firstMismatch;
    for (int i = 0; i < 1000; ++i) {
        auto layers = randomStack(rng, shape);
        fsutil::TempDir dir(scratchBase(), "flatten-");
        auto actual = snapshotOf(imagefs::flatten(layerStackOf(layers, dir.path())));
        auto expected = sequentialOracle(layers);
        if (actual == expected) {
            ++matched;
        } else if (firstMismatch.empty()) {
            firstMismatch = " first mismatch at case " + std::to_string(i) + ": " +
                            describeDifference(expected, actual, 2);
        }
    }
    auto elapsed = secondsSince(start);
    return {matched == 1000 && elapsed < 60.0,
            std::to_string(matched) + "/1000 " + fixed(elapsed) + "s" + firstMismatch};
}

// Grammar of a device list: indices or GPU- uuids, comma separated, no repeats.
bool visibleDevicesGrammar(const std::string& raw) {
    static const std::regex list(R"(^(\d+|GPU-[0-9A-Fa-f-]+)(,(\d+|GPU-[0-9A-Fa-f-]+))*$)");
    if (!std::regex_match(raw, list)) {
        return false;
    }
    std::set<std::string> seen;
    std::stringstream in(raw);
    std::string token;
    while (std::getline(in, token, ',')) {
        if (token[0] != 'G') {
            token.erase(0, std::min(token.find_first_not_of('0'), token.size() - 1));
        } else {
            for (auto& c : token) {
                c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
            }
        }
        if (!seen.insert(token).second) {
            return false;
        }
    }
    return true;
}

std::vector<std::string> invalidDeviceCorpus(size_t count) {
    std::mt19937_64 rng(0xacc0003);
    const std::vector<std::string> pieces = {"0",  "1", "2",    "9",    ",",   ",,",  "-",          "GPU-", "gpu-",
                                             "ab", " ", "\t",   "x",    "0x1", "+1",  "NoDevFiles", "all",  "none",
                                             ";",  ":", "GPU-Z", "١",   "=",   "\"",  "00",         "-1",   "1e3"};
    std::vector<std::string> corpus;
    while (corpus.size() < count) {
        std::string raw;
        for (size_t n = rng() % 6; n > 0; --n) {
            raw += pieces[rng() % pieces.size()];
        }
        if (!raw.empty() && !visibleDevicesGrammar(raw)) {
            corpus.push_back(raw);
        }
    }
    return corpus;
}

Outcome gpuTrigger() {
    auto start = Clock::now();
    Site site;
    site.site.gpu.mockInventory = writeMockGpuInventory(site.dir.path() / "gpu", 3).string();
    site.write();
    site.import("toolbox", toolboxLayer(defaultOsRelease), toolboxConfig());
    auto trace = site.dir.path() / "trace";

    std::vector<std::string> failures;
    auto enabled = site.run({"--image=toolbox", "--trace", trace.string(), "/bin/env"},
                            {{"CUDA_VISIBLE_DEVICES", "0,2"}});
    auto counts = prepareCounts(trace);
    if (enabled.status != 0 || countOf(counts, "gpu-device") != "2" || countOf(counts, "gpu-library") != "7" ||
        countOf(counts, "gpu-binary") != "1" || enabled.out.find("CUDA_VISIBLE_DEVICES=0,1\n") == std::string::npos) {
        failures.push_back("0,2 gave device=" + countOf(counts, "gpu-device") + " library=" +
                           countOf(counts, "gpu-library") + " binary=" + countOf(counts, "gpu-binary"));
    }
    auto single = site.run({"--image=toolbox", "--trace", trace.string(), "/bin/env"}, {{"CUDA_VISIBLE_DEVICES", "2"}});
    if (single.out.find("CUDA_VISIBLE_DEVICES=0\n") == std::string::npos ||
        countOf(prepareCounts(trace), "gpu-device") != "1") {
        failures.push_back("2 was not renumbered to 0");
    }

    auto corpus = invalidDeviceCorpus(10000);
    std::vector<std::optional<std::string>> values = {std::nullopt};
    values.insert(values.end(), corpus.begin(), corpus.end());
    size_t disabled = 0;
    for (const auto& value : values) {
        auto result = site.run({"--image=toolbox", "--trace", trace.string(), "/bin/true"},
                               {{"CUDA_VISIBLE_DEVICES", value}});
        auto c = prepareCounts(trace);
        bool ok = result.status == 0 && c["gpu"] == "disabled" && countOf(c, "gpu-device") == "0" &&
                  countOf(c, "gpu-library") == "0" && countOf(c, "gpu-binary") == "0";
        if (ok) {
            ++disabled;
        } else if (failures.size() < 3) {
            failures.push_back("value '" + value.value_or("<unset>") + "' status=" + std::to_string(result.status));
        }
    }
    std::string detail = "invalid/absent disabled " + std::to_string(disabled) + "/" + std::to_string(values.size()) +
                         " " + fixed(secondsSince(start)) + "s";
    for (const auto& failure : failures) {
        detail += "; " + failure;
    }
    return {failures.empty() && disabled == values.size(), detail};
}

Outcome abiGrid() {
    std::mt19937_64 rng(0xacc0004);
    int cells = 0;
    int agreed = 0;
    for (unsigned hostCurrent = 8; hostCurrent <= 16; ++hostCurrent) {
        for (unsigned hostAge = 0; hostAge <= 4; ++hostAge) {
            for (unsigned containerCurrent = 8; containerCurrent <= 16; ++containerCurrent) {
                ++cells;
                bool expected = hostCurrent - hostAge <= containerCurrent && containerCurrent <= hostCurrent;
                std::string expectedDiagnostic =
                    expected ? "" : "mpi-abi: container libmpi interface " + std::to_string(containerCurrent) +
                                        " not provided by host range [" + std::to_string(hostCurrent - hostAge) +
                                        "," + std::to_string(hostCurrent) + "]";
                bool ok = true;
                for (int perturbation = 0; perturbation < 8; ++perturbation) {
                    mpi::AbiVersion host{hostCurrent, static_cast<unsigned>(rng() % 40), hostAge, "libmpi"};
                    mpi::AbiVersion container{containerCurrent, static_cast<unsigned>(rng() % 40),
                                              static_cast<unsigned>(rng() % 3), "libmpi"};
                    auto verdict = mpi::checkAbiCompatibility(container, host);
                    ok = ok && verdict.compatible == expected && verdict.diagnostic == expectedDiagnostic;
                }
                agreed += ok ? 1 : 0;
            }
        }
    }
    return {cells == 405 && agreed == cells, std::to_string(agreed) + "/" + std::to_string(cells) + " cells"};
}

FixtureLayer mpiImageLayer() {
    auto layer = toolboxLayer(defaultOsRelease);
    for (const auto& item : fs::directory_iterator(stubDir("c12"))) {
        auto name = "usr/lib/" + item.path().filename().string();
        if (item.is_symlink()) {
            layer.push_back(symlinkEntry(name, fs::read_symlink(item.path()).string()));
        } else {
            layer.push_back(fileEntry(name, fsutil::readFile(item.path()), 0755));
        }
    }
    return layer;
}

config::HostMpiSettings hostMpi(const std::string& variant, const std::string& major) {
    config::HostMpiSettings settings;
    for (const char* base : mpi::frontendNames) {
        settings.frontends[base] = (stubDir(variant) / (std::string(base) + ".so." + major)).string();
    }
    return settings;
}

Outcome mpiSwap() {
    Site site;
    site.site.mpi = hostMpi("h14", "12");
    site.write();
    site.import("mpiapp", mpiImageLayer(), toolboxConfig());
    auto incompatibleConfig = site.dir.path() / "config-h11";
    auto incompatibleSite = site.site;
    incompatibleSite.mpi = hostMpi("h11", "11");
    writeSite(incompatibleConfig, incompatibleSite);

    std::vector<std::string> failures;
    // Frontend paths the loader would find in the image, scanned from the pack.
    gateway::ImageGateway gateway(site.site);
    auto packed = gateway.packedImage(gateway.lookup(gateway.parse("mpiapp")));
    auto extracted = site.dir.path() / "extracted";
    fs::create_directories(extracted);
    imagefs::extractArchive(packed.path, extracted, packed.config);
    auto scan = mpi::scanContainerMpi(extracted, "");
    auto plan = mpi::planMpiInjection(scan, mpi::hostMpiConfigFrom(*site.site.mpi));
    std::set<std::string> scanned;
    std::set<std::string> overmounted;
    for (const auto& [base, found] : scan.found) {
        scanned.insert(found.containerPath);
    }
    for (const auto& entry : plan.libraryOvermounts) {
        overmounted.insert(entry.target);
    }
    if (scanned.size() != 3 || scanned != overmounted) {
        failures.push_back("plan overmounts " + std::to_string(overmounted.size()) + " of " +
                           std::to_string(scanned.size()) + " scanned frontends");
    }

    auto trace = site.dir.path() / "trace";
    for (const auto& path : scanned) {
        auto base = fs::path(path).filename().string();
        base = base.substr(0, base.find(".so"));
        auto hostBytes = fsutil::readFile(fs::canonical(site.site.mpi->frontends.at(base)));
        auto containerBytes = fsutil::readFile(fs::canonical(stubDir("c12") / fs::path(path).filename()));
        auto swapped = site.run({"--image=mpiapp", "--mpi", "--trace", trace.string(), "cat", path});
        if (swapped.status != 0 || swapped.out != hostBytes) {
            failures.push_back("--mpi: " + path + " does not show the host library");
        }
        if (countOf(prepareCounts(trace), "mpi-frontend") != "3") {
            failures.push_back("--mpi: plan does not list 3 frontend overmounts");
        }
        auto plain = site.run({"--image=mpiapp", "--trace", trace.string(), "cat", path});
        auto counts = prepareCounts(trace);
        if (plain.status != 0 || plain.out != containerBytes || counts["mpi"] != "disabled" ||
            countOf(counts, "mpi-frontend") != "0" || countOf(counts, "mpi-dependency") != "0" ||
            countOf(counts, "mpi-config") != "0") {
            failures.push_back("without --mpi: " + path + " or the plan changed");
        }
    }

    auto refused = site.run({"--image=mpiapp", "--mpi", "/bin/true"}, {}, incompatibleConfig);
    if (refused.status != 210 ||
        refused.err.find("mpi-abi: container libmpi interface 12 not provided by host range [11,11]") ==
            std::string::npos) {
        failures.push_back("incompatible host: status=" + std::to_string(refused.status) + " stderr=" + refused.err);
    }
    std::string detail = std::to_string(scanned.size()) + " frontends swapped, incompatible status " +
                         std::to_string(refused.status);
    for (const auto& failure : failures) {
        detail += "; " + failure;
    }
    return {failures.empty(), detail};
}

Outcome stageOrder() {
    Site site;
    auto siteDir = site.dir.path() / "site-data";
    auto userDir = site.dir.path() / "user-data";
    fs::create_directories(siteDir);
    fs::create_directories(userDir);
    site.site.siteMounts = {{siteDir.string(), "/site", false}};
    site.write();
    site.import("toolbox", toolboxLayer(defaultOsRelease), toolboxConfig());
    auto trace = site.dir.path() / "trace";

    std::vector<std::string> faults;
    for (auto stage : runtime::canonicalStages) {
        faults.emplace_back(runtime::stageName(stage));
    }
    for (int entry = 0; entry < 3; ++entry) {
        faults.push_back("MOUNT:" + std::to_string(entry));
    }
    int valid = 0;
    std::vector<std::string> failures;
    for (int i = 0; i < 100; ++i) {
        const auto& fault = faults[i % faults.size()];
        site.run({"--image=toolbox", "--volume", userDir.string() + ":/data", "--trace", trace.string(), "--fault",
                  fault, "/bin/true"});
        auto events = runtime::StageTrace::parse(fsutil::readFile(trace));
        auto violation = runtime::checkTraceInvariants(events);
        bool dropped = false;
        bool mountAfterDrop = false;
        bool failedSeen = false;
        for (const auto& event : events) {
            mountAfterDrop = mountAfterDrop || (dropped && event.stage == runtime::Stage::Mount);
            dropped = dropped || event.stage == runtime::Stage::DropPrivileges;
            failedSeen = failedSeen || event.failed;
        }
        if (!violation && !mountAfterDrop && failedSeen) {
            ++valid;
        } else if (failures.size() < 3) {
            failures.push_back("fault " + fault + ": " + violation.value_or("no failure or MOUNT after drop"));
        }
    }
    std::string detail = std::to_string(valid) + "/100 traces well-formed";
    for (const auto& failure : failures) {
        detail += "; " + failure;
    }
    return {valid == 100 && fs::is_empty(site.site.workDir), detail};
}

Outcome exitStatuses() {
    Site site;
    site.write();
    site.import("toolbox", toolboxLayer(defaultOsRelease), toolboxConfig());
    int matched = 0;
    std::string firstMismatch;
    for (int status = 0; status <= 255; ++status) {
        auto result = site.run({"--image=toolbox", "/bin/exit", std::to_string(status)});
        if (result.status == status) {
            ++matched;
        } else if (firstMismatch.empty()) {
            firstMismatch = " first mismatch " + std::to_string(status) + "->" + std::to_string(result.status);
        }
    }
    return {matched == 256, std::to_string(matched) + "/256" + firstMismatch};
}

Outcome gatewayDedup() {
    FixtureRegistry registry;
    auto layers = std::vector<FixtureLayer>{
        {dirEntry("etc"), fileEntry("etc/os-release", defaultOsRelease)},
        {dirEntry("opt"), fileEntry("opt/data", std::string(200000, 'd'))},
    };
    registry.addImage("team/dedup", "1.0", layers, toolboxConfig());
    registry.setBlobDelay(std::chrono::milliseconds(200));
    registry.start();
    Site site;
    site.site.registryUrl = registry.url();
    site.write();

    std::vector<ProcessResult> results(8);
    std::vector<std::thread> threads;
    for (size_t i = 0; i < results.size(); ++i) {
        threads.emplace_back([&, i] { results[i] = site.img({"pull", "team/dedup:1.0"}); });
    }
    for (auto& thread : threads) {
        thread.join();
    }
    int succeeded = 0;
    for (const auto& result : results) {
        succeeded += result.status == 0 ? 1 : 0;
    }
    std::vector<int> downloads;
    for (const auto& digest : registry.layerDigests("team/dedup", "1.0")) {
        downloads.push_back(registry.blobDownloads(digest));
    }
    downloads.push_back(registry.blobDownloads(registry.configDigest("team/dedup", "1.0")));
    bool once = std::all_of(downloads.begin(), downloads.end(), [](int n) { return n == 1; });
    auto entries = gateway::ImageGateway(site.site).list();
    bool oneReady = entries.size() == 1 && entries[0].state == gateway::ImageState::Ready;
    registry.stop();
    std::string counts;
    for (int n : downloads) {
        counts += (counts.empty() ? "" : ",") + std::to_string(n);
    }
    return {succeeded == 8 && once && oneReady,
            std::to_string(succeeded) + "/8 pulls ok, blob downloads [" + counts + "], catalog entries " +
                std::to_string(entries.size())};
}

Outcome packRoundTrip() {
    std::mt19937_64 rng(0xacc0009);
    int reproduced = 0;
    int identical = 0;
    std::string firstMismatch;
    for (int i = 0; i < 50; ++i) {
        imagefs::FlattenedImage image;
        image.root = randomTree(rng);
        image.config = toolboxConfig();
        image.imageId = imagefs::computeImageId(image.root, image.config);
        fsutil::TempDir dir(scratchBase(), "pack-");
        auto first = imagefs::pack(image, dir.path() / "a", imagefs::PackPreference::Archive);
        auto second = imagefs::pack(image, dir.path() / "b", imagefs::PackPreference::Archive);
        identical += fsutil::readFile(first.path) == fsutil::readFile(second.path) ? 1 : 0;
        fs::create_directories(dir.path() / "root");
        auto mounted = imagefs::mountPacked(first, dir.path() / "root");
        auto expected = snapshotOf(image.root);
        auto actual = snapshotOfDirectory(mounted.root());
        if (actual == expected) {
            ++reproduced;
        } else if (firstMismatch.empty()) {
            firstMismatch = " first mismatch: " + describeDifference(expected, actual, 2);
        }
        mounted.release();
    }
    return {reproduced == 50 && identical == 50, std::to_string(reproduced) + "/50 trees reproduced, " +
                                                     std::to_string(identical) + "/50 archives identical" +
                                                     firstMismatch};
}

}

int main() {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
        {"os-release round trip", osReleaseRoundTrip},
        {"flattening matches sequential extraction", flattenOracle},
        {"GPU trigger and renumbering", gpuTrigger},
        {"ABI verdict grid", abiGrid},
        {"MPI swap behavior", mpiSwap},
        {"stage-order invariant under faults", stageOrder},
        {"exit-status transparency", exitStatuses},
        {"gateway pull deduplication", gatewayDedup},
        {"pack round trip", packRoundTrip},
    };
    bool allPassed = true;
    for (size_t i = 0; i < criteria.size(); ++i) {
        const auto& [name, check] = criteria[i];
        Outcome outcome;
        auto start = Clock::now();
        try {
            // Pack round trips mount, so they run in a private mount namespace.
            if (i + 1 == criteria.size() && !enterPrivateMountNamespace()) {
                std::cerr << "note: no private mount namespace, packs are checked through extraction\n";
            }
            outcome = check();
        } catch (const std::exception& e) {
            outcome = {false, std::string("error: ") + e.what()};
        }
        allPassed = allPassed && outcome.pass;
        std::cout << "criterion " << i + 1 << ": " << (outcome.pass ? "PASS" : "FAIL") << " " << name << " ("
                  << outcome.detail << ", " << fixed(secondsSince(start)) << "s)" << std::endl;
    }
    return allPassed ? 0 : 1;
}
