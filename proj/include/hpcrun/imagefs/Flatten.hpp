#pragma once

#include <string>

#include "hpcrun/imagefs/ImageConfig.hpp"
#include "hpcrun/imagefs/Layer.hpp"
#include "hpcrun/imagefs/Tree.hpp"

namespace hpcrun::imagefs {

/// Merged root tree plus runtime metadata; imageId is computeImageId(root, config).
struct FlattenedImage {
    Tree root;
    ImageConfig config;
    std::string imageId;
};

/// Union of the stack, upper layers winning. `.wh.<name>` deletes <name> from
/// lower layers, `.wh..wh..opq` hides all lower content of its directory, and
/// neither marker survives. A whiteout only affects layers below its own.
Tree flatten(const LayerStack& stack);

FlattenedImage flattenImage(const LayerStack& stack, ImageConfig config);

/// Canonical byte serialization the image id is hashed from.
std::string canonicalSerialization(const Tree& root, const ImageConfig& config);

/// Lower-case hex sha256 of canonicalSerialization().
std::string computeImageId(const Tree& root, const ImageConfig& config);

}
