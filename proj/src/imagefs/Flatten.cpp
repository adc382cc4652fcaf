#include "hpcrun/imagefs/Flatten.hpp"

#include <cstdio>
#include <unordered_map>
#include <utility>
#include <vector>

#include "hpcrun/common/Hash.hpp"

namespace hpcrun::imagefs {

namespace {

enum class Mask {
    Deleted, // the path and everything below it
    NonDirectory, // everything below the path
    Opaque, // everything below the path
};

using MaskSet = std::unordered_map<std::string, Mask>;

bool hiddenByUpperLayers(const std::string& path, const MaskSet& masks) {
    if (masks.empty()) {
        return false;
    }
    auto self = masks.find(path);
    if (self != masks.end() && self->second == Mask::Deleted) {
        return true;
    }
    if (masks.count(std::string()) != 0) {
        return true;
    }
    for (auto slash = path.find('/'); slash != std::string::npos; slash = path.find('/', slash + 1)) {
        if (masks.count(path.substr(0, slash)) != 0) {
            return true;
        }
    }
    return false;
}

std::string joinPath(const std::string& parent, const std::string& name) {
    return parent.empty() ? name : parent + "/" + name;
}

}

Tree flatten(const LayerStack& stack) {
    Tree merged;
    MaskSet masks;
    for (auto layer = stack.layers.rbegin(); layer != stack.layers.rend(); ++layer) {
        std::vector<std::pair<std::string, Mask>> introduced;
        for (const auto& [path, node] : layer->entries) {
            auto name = baseNameOf(path);
            if (isWhiteoutName(name)) {
                if (name == opaqueMarker) {
                    introduced.emplace_back(parentOf(path), Mask::Opaque);
                } else if (name.rfind(".wh..wh.", 0) != 0 && name.size() > 4) {
                    introduced.emplace_back(joinPath(parentOf(path), name.substr(4)), Mask::Deleted);
                }
                continue;
            }
            if (hiddenByUpperLayers(path, masks)) {
                continue;
            }
            if (node.type != NodeType::Directory) {
                introduced.emplace_back(path, Mask::NonDirectory);
            }
            if (auto existing = merged.find(path); existing != merged.end()) {
                if (existing->second.implicit && node.type == NodeType::Directory) {
                    existing->second = node;
                } else if (existing->second.implicit) {
                    existing->second.implicit = false;
                }
                continue;
            }
            merged.emplace(path, node);
        }
        for (auto& [path, mask] : introduced) {
            auto [it, inserted] = masks.emplace(path, mask);
            if (!inserted && mask == Mask::Deleted) {
                it->second = Mask::Deleted;
            }
        }
    }
    for (auto& entry : merged) {
        entry.second.implicit = false;
    }
    return merged;
}

FlattenedImage flattenImage(const LayerStack& stack, ImageConfig config) {
    FlattenedImage image;
    image.root = flatten(stack);
    image.config = std::move(config);
    image.imageId = computeImageId(image.root, image.config);
    return image;
}

std::string canonicalSerialization(const Tree& root, const ImageConfig& config) {
    std::string out = "hpcrun-image/1\n";
    for (const auto& [path, node] : root) {
        char mode[8];
        std::snprintf(mode, sizeof(mode), "%04o", node.mode & 07777);
        switch (node.type) {
        case NodeType::Directory:
            out += "D";
            break;
        case NodeType::Regular:
            out += "F";
            break;
        case NodeType::Symlink:
            out += "L";
            break;
        }
        out.push_back('\0');
        out += mode;
        out.push_back('\0');
        out += path;
        out.push_back('\0');
        if (node.type == NodeType::Regular) {
            out += node.content.sha256();
        } else if (node.type == NodeType::Symlink) {
            out += node.linkTarget;
        }
        out.push_back('\0');
        out.push_back('\n');
    }
    out += "config";
    out.push_back('\0');
    out += toJson(config).dump();
    out.push_back('\n');
    return out;
}

std::string computeImageId(const Tree& root, const ImageConfig& config) {
    return sha256Hex(canonicalSerialization(root, config));
}

}
