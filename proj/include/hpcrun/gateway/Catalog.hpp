#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "hpcrun/gateway/ImageReference.hpp"

namespace hpcrun::gateway {

namespace fs = std::filesystem;

enum class ImageState { Pulling, Ready, Failed };

std::string_view imageStateName(ImageState state);
std::optional<ImageState> imageStateFromName(std::string_view name);

struct CatalogEntry {
    ImageReference reference;
    std::string imageId;
    ImageState state = ImageState::Pulling;
    std::string createdAt;
    fs::path packPath;
    /// "registry:<url>" or "import:<path>"
    std::string provenance;
    std::string manifestDigest;
    std::string error;

    bool operator==(const CatalogEntry&) const = default;
};

/// The `<store>/catalog` document. Every update runs under an exclusive lock on
/// `<store>/catalog.lock` and is published with write-temp-then-rename, so
/// readers never see a partial document. The document carries a checksum of its
/// entries; a mismatch reads as Error(CatalogCorrupt).
class Catalog {
public:
    explicit Catalog(fs::path store);

    std::vector<CatalogEntry> entries() const;
    std::optional<CatalogEntry> find(const ImageReference& ref) const;

    /// Inserts or replaces the entry for entry.reference.
    void put(const CatalogEntry& entry);

    /// Read-modify-write under the catalog lock.
    void update(const std::function<void(std::vector<CatalogEntry>&)>& change);

    const fs::path& documentPath() const { return document_; }

private:
    std::vector<CatalogEntry> readUnlocked() const;
    void writeUnlocked(const std::vector<CatalogEntry>& entries) const;

    fs::path store_;
    fs::path document_;
};

}
