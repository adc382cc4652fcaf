#include "hpcrun/imagefs/Layer.hpp"

#include "hpcrun/common/Error.hpp"
#include "hpcrun/common/Path.hpp"
#include "hpcrun/imagefs/Tar.hpp"

namespace hpcrun::imagefs {

namespace {

void dropDescendants(Tree& tree, const std::string& path) {
    auto prefix = path + "/";
    auto it = tree.lower_bound(prefix);
    while (it != tree.end() && it->first.compare(0, prefix.size(), prefix) == 0) {
        it = tree.erase(it);
    }
}

// Makes sure every ancestor of `path` is a directory entry of this layer.
void ensureParents(Tree& tree, const std::string& path, const std::string& rawName) {
    std::string parent = parentOf(path);
    std::vector<std::string> missing;
    while (!parent.empty()) {
        auto it = tree.find(parent);
        if (it != tree.end()) {
            if (it->second.type != NodeType::Directory) {
                throw Error(ErrorCode::PathEscape,
                            "layer member " + rawName + " lies below non-directory " + parent);
            }
            break;
        }
        missing.push_back(parent);
        parent = parentOf(parent);
    }
    for (const auto& dir : missing) {
        auto node = makeDirectory();
        node.implicit = true;
        tree.emplace(dir, std::move(node));
    }
}

void insertEntry(Layer& layer, const std::string& path, Node node, const std::string& rawName) {
    ensureParents(layer.entries, path, rawName);
    auto existing = layer.entries.find(path);
    if (existing != layer.entries.end()) {
        bool hadChildren = existing->second.type == NodeType::Directory;
        if (node.type != NodeType::Directory && hadChildren) {
            auto before = layer.entries.size();
            dropDescendants(layer.entries, path);
            if (layer.entries.size() != before) {
                layer.warnings.push_back("member " + rawName + " replaces a directory with contents in the same layer");
            }
        }
        existing->second = std::move(node);
        return;
    }
    layer.entries.emplace(path, std::move(node));
}

}

bool isWhiteoutName(const std::string& baseName) {
    return baseName.rfind(whiteoutPrefix, 0) == 0;
}

Layer indexLayer(const fs::path& plainTar) {
    Layer layer;
    auto archive = std::make_shared<const fs::path>(plainTar);
    TarReader reader(plainTar);
    while (auto entry = reader.next()) {
        auto normalized = path::normalizeRelative(entry->name);
        if (!normalized) {
            throw Error(ErrorCode::PathEscape, "layer member escapes the root: " + entry->name);
        }
        if (normalized->empty()) {
            continue;
        }
        const auto& path = *normalized;

        Node node;
        node.mode = entry->mode;
        node.uid = entry->uid;
        node.gid = entry->gid;
        if (entry->isRegular()) {
            node.type = NodeType::Regular;
            node.content = Content::fromArchive(archive, entry->dataOffset, entry->size);
        } else if (entry->type == '5') {
            node.type = NodeType::Directory;
        } else if (entry->type == '2') {
            node.type = NodeType::Symlink;
            node.linkTarget = entry->linkName;
        } else if (entry->type == '1') {
            auto target = path::normalizeRelative(entry->linkName);
            if (!target) {
                throw Error(ErrorCode::PathEscape, "hard link target escapes the root: " + entry->linkName);
            }
            auto source = layer.entries.find(*target);
            if (source == layer.entries.end() || source->second.type != NodeType::Regular) {
                layer.warnings.push_back("skipped hard link " + entry->name + ": target " + entry->linkName +
                                         " is not a regular file of this layer");
                continue;
            }
            // materialized as an independent copy
            node = source->second;
        } else if (entry->type == '3' || entry->type == '4' || entry->type == '6') {
            layer.warnings.push_back("skipped device or fifo " + entry->name);
            continue;
        } else {
            layer.warnings.push_back("skipped unsupported member type '" + std::string(1, entry->type) +
                                     "' for " + entry->name);
            continue;
        }
        insertEntry(layer, path, std::move(node), entry->name);
    }
    return layer;
}

Layer layerFromTree(Tree tree) {
    Layer layer;
    for (auto& [path, node] : tree) {
        insertEntry(layer, path, std::move(node), path);
    }
    return layer;
}

}
