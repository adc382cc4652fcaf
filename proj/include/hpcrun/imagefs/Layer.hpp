#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "hpcrun/imagefs/Tree.hpp"

namespace hpcrun::imagefs {

/// One extracted layer. Whiteout markers are kept as ordinary entries so that
/// flattening can interpret them; every entry's ancestors are present as directories.
struct Layer {
    Tree entries;
    std::vector<std::string> warnings;
};

/// Bottom-most layer first.
struct LayerStack {
    std::vector<Layer> layers;
};

/// Indexes an uncompressed layer tar. File contents stay in the archive and are
/// referenced by offset, so the archive must outlive the returned layer.
/// Throws Error(PathEscape) for members resolving outside the root or below a
/// non-directory of the same layer.
Layer indexLayer(const fs::path& plainTar);

/// Builds a layer from an in-memory tree, adding missing parent directories.
Layer layerFromTree(Tree tree);

constexpr const char* whiteoutPrefix = ".wh.";
constexpr const char* opaqueMarker = ".wh..wh..opq";

bool isWhiteoutName(const std::string& baseName);

}
