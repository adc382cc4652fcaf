#include "hpcrun/gateway/Catalog.hpp"

#include <nlohmann/json.hpp>

#include "hpcrun/common/Error.hpp"
#include "hpcrun/common/Filesystem.hpp"
#include "hpcrun/common/Hash.hpp"

namespace hpcrun::gateway {

namespace {

using nlohmann::json;

json entryToJson(const CatalogEntry& entry) {
    return json{
        {"registry", entry.reference.registry},
        {"repository", entry.reference.repository},
        {"tag", entry.reference.tag},
        {"digest", entry.reference.digest},
        {"imageId", entry.imageId},
        {"state", imageStateName(entry.state)},
        {"createdAt", entry.createdAt},
        {"packPath", entry.packPath.string()},
        {"provenance", entry.provenance},
        {"manifestDigest", entry.manifestDigest},
        {"error", entry.error},
    };
}

CatalogEntry entryFromJson(const json& doc) {
    CatalogEntry entry;
    entry.reference.registry = doc.at("registry").get<std::string>();
    entry.reference.repository = doc.at("repository").get<std::string>();
    entry.reference.tag = doc.at("tag").get<std::string>();
    entry.reference.digest = doc.at("digest").get<std::string>();
    entry.imageId = doc.at("imageId").get<std::string>();
    auto state = imageStateFromName(doc.at("state").get<std::string>());
    if (!state) {
        throw Error(ErrorCode::CatalogCorrupt, "catalog entry has unknown state");
    }
    entry.state = *state;
    entry.createdAt = doc.at("createdAt").get<std::string>();
    entry.packPath = doc.at("packPath").get<std::string>();
    entry.provenance = doc.value("provenance", "");
    entry.manifestDigest = doc.value("manifestDigest", "");
    entry.error = doc.value("error", "");
    return entry;
}

}

std::string_view imageStateName(ImageState state) {
    switch (state) {
    case ImageState::Pulling:
        return "PULLING";
    case ImageState::Ready:
        return "READY";
    case ImageState::Failed:
        return "FAILED";
    }
    return "FAILED";
}

std::optional<ImageState> imageStateFromName(std::string_view name) {
    if (name == "PULLING") {
        return ImageState::Pulling;
    }
    if (name == "READY") {
        return ImageState::Ready;
    }
    if (name == "FAILED") {
        return ImageState::Failed;
    }
    return std::nullopt;
}

Catalog::Catalog(fs::path store) : store_(std::move(store)), document_(store_ / "catalog") {}

std::vector<CatalogEntry> Catalog::readUnlocked() const {
    std::error_code ec;
    if (!fs::exists(document_, ec)) {
        return {};
    }
    std::string text;
    try {
        text = fsutil::readFile(document_);
    } catch (const std::exception& e) {
        throw Error(ErrorCode::CatalogCorrupt, "cannot read catalog " + document_.string() + ": " + e.what());
    }
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::exception&) {
        throw Error(ErrorCode::CatalogCorrupt, "catalog " + document_.string() + " is not valid JSON");
    }
    if (!doc.is_object() || !doc.contains("entries") || !doc["entries"].is_array() || !doc.contains("checksum")) {
        throw Error(ErrorCode::CatalogCorrupt, "catalog " + document_.string() + " has an unexpected layout");
    }
    if (doc["checksum"] != sha256Hex(doc["entries"].dump())) {
        throw Error(ErrorCode::CatalogCorrupt, "catalog " + document_.string() + " failed its integrity check");
    }
    std::vector<CatalogEntry> entries;
    try {
        for (const auto& item : doc["entries"]) {
            entries.push_back(entryFromJson(item));
        }
    } catch (const json::exception& e) {
        throw Error(ErrorCode::CatalogCorrupt, std::string("catalog entry malformed: ") + e.what());
    }
    return entries;
}

void Catalog::writeUnlocked(const std::vector<CatalogEntry>& entries) const {
    json list = json::array();
    for (const auto& entry : entries) {
        list.push_back(entryToJson(entry));
    }
    json doc{{"version", 1}, {"entries", list}, {"checksum", sha256Hex(list.dump())}};
    fsutil::writeFileAtomic(document_, doc.dump(2) + "\n");
}

std::vector<CatalogEntry> Catalog::entries() const {
    // Rename publishes atomically, so a reader needs no lock.
    return readUnlocked();
}

std::optional<CatalogEntry> Catalog::find(const ImageReference& ref) const {
    for (auto& entry : entries()) {
        if (entry.reference == ref) {
            return entry;
        }
    }
    return std::nullopt;
}

void Catalog::update(const std::function<void(std::vector<CatalogEntry>&)>& change) {
    fs::create_directories(store_);
    fsutil::FileLock lock(store_ / "catalog.lock");
    auto entries = readUnlocked();
    change(entries);
    writeUnlocked(entries);
}

void Catalog::put(const CatalogEntry& entry) {
    update([&](std::vector<CatalogEntry>& entries) {
        for (auto& existing : entries) {
            if (existing.reference == entry.reference) {
                existing = entry;
                return;
            }
        }
        entries.push_back(entry);
    });
}

}
