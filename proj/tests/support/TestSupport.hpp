#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "hpcrun/config/SiteConfig.hpp"
#include "hpcrun/imagefs/ImageConfig.hpp"
#include "hpcrun/imagefs/Layer.hpp"
#include "hpcrun/imagefs/Tree.hpp"

namespace hpcrun::testing {

namespace fs = std::filesystem;

// Built artifacts, injected by the build system.
fs::path imgBinary();
fs::path runBinary();
fs::path toolboxBinary();
/// Directory holding one stub MPI variant (c12, c10, h14, h11).
fs::path stubDir(const std::string& variant);

/// Moves the (single-threaded) caller into a private mount namespace so that
/// mounts made by a test never reach the host. Returns false when not permitted.
bool enterPrivateMountNamespace();

/// Base directory for scratch data; created on first use.
fs::path scratchBase();

struct ProcessResult {
    int status = -1;
    std::string out;
    std::string err;
};

/// Runs argv to completion. The child inherits the environment with `env`
/// applied on top; a value of std::nullopt removes the variable.
ProcessResult runProcess(const std::vector<std::string>& argv,
                         const std::map<std::string, std::optional<std::string>>& env = {});

/// Entry of a hand-written layer. Whiteout names the path to delete, Opaque
/// names the directory whose lower content is hidden.
struct FixtureEntry {
    enum class Kind { File, Dir, Symlink, HardLink, Whiteout, Opaque };

    Kind kind = Kind::File;
    std::string path;
    /// File content, or link target for Symlink and HardLink.
    std::string data;
    uint32_t mode = 0644;
};

FixtureEntry fileEntry(std::string path, std::string data, uint32_t mode = 0644);
FixtureEntry dirEntry(std::string path, uint32_t mode = 0755);
FixtureEntry symlinkEntry(std::string path, std::string target);
FixtureEntry hardlinkEntry(std::string path, std::string target);
FixtureEntry whiteoutEntry(std::string path);
FixtureEntry opaqueEntry(std::string dir);

using FixtureLayer = std::vector<FixtureEntry>;

/// Uncompressed tar bytes of one layer, members in the given order.
std::string layerTar(const FixtureLayer& layer);

std::string gzipBytes(const std::string& data);

struct SavedImageOptions {
    bool gzipLayers = false;
    bool gzipArchive = false;
    bool omitManifest = false;
    std::string repoTag = "fixture:latest";
};

/// Registry-style config blob for an ImageConfig.
std::string configBlob(const imagefs::ImageConfig& config);

/// Writes an archive in the multi-layer save format (manifest.json, config
/// blob, one directory per layer).
void writeSavedImage(const fs::path& out, const std::vector<FixtureLayer>& layers, const imagefs::ImageConfig& config,
                     const SavedImageOptions& options = {});

/// A layer with the toolbox at /bin/toolbox, an applet symlink farm in /bin,
/// /etc/os-release, /etc/passwd, /tmp and /usr/lib.
FixtureLayer toolboxLayer(const std::string& osRelease);

inline constexpr const char* defaultOsRelease =
    "NAME=\"Fixture Linux\"\nID=fixture\nVERSION_ID=1.0\nPRETTY_NAME=\"Fixture Linux 1.0\"\n";

/// Comparable view of a tree: path -> "d 0755", "f 0644 <sha256>" or "l <target>".
using Snapshot = std::map<std::string, std::string>;

Snapshot snapshotOf(const imagefs::Tree& tree);
/// Walks a directory without following symlinks. The root itself is excluded.
Snapshot snapshotOfDirectory(const fs::path& root);
/// First differences between two snapshots, for failure messages.
std::string describeDifference(const Snapshot& expected, const Snapshot& actual, size_t limit = 5);

/// One line per entry, layer by layer, for failure messages.
std::string describeStack(const std::vector<FixtureLayer>& layers);

/// Applies the layers bottom-up, one at a time: whiteout markers first (they
/// only affect content below), then entries in order. Directories replace
/// non-directories, files and symlinks replace whatever was at their path
/// including a whole subtree, and directories a layer never lists are created
/// (mode 0755) only when nothing directory-like is there yet.
Snapshot sequentialOracle(const std::vector<FixtureLayer>& layers);

/// Extracts each layer with GNU tar into `target` after deleting what its
/// whiteout markers name. Requires layers that list every parent directory.
Snapshot gnuTarOracle(const std::vector<FixtureLayer>& layers, const fs::path& scratch);

/// Writes each layer as a tar below `scratch` and indexes it.
imagefs::LayerStack layerStackOf(const std::vector<FixtureLayer>& layers, const fs::path& scratch);

struct StackShape {
    size_t maxLayers = 5;
    size_t maxEntries = 50;
    /// Every layer lists the parents of its entries (as real image builders do).
    bool explicitParents = false;
};

/// Random stack over a small name alphabet so that layers collide often.
/// Within a layer no entry lies below a non-directory of that layer.
std::vector<FixtureLayer> randomStack(std::mt19937_64& rng, const StackShape& shape = {});

/// Random tree with long names, assorted modes, symlinks and some large files.
imagefs::Tree randomTree(std::mt19937_64& rng);

/// Site configuration rooted in `base`: image store, work dir, ARCHIVE packs.
config::SiteConfig siteIn(const fs::path& base);
/// Writes `site` as a config document and returns its path.
fs::path writeSite(const fs::path& path, const config::SiteConfig& site);

/// Mock inventory with `count` devices backed by empty files below `base`, all
/// seven driver libraries and nvidia-smi. Returns the document path.
fs::path writeMockGpuInventory(const fs::path& base, unsigned count);

}
