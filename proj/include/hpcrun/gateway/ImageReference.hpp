#pragma once

#include <optional>
#include <ostream>
#include <string>
#include <string_view>

#include "hpcrun/config/SiteConfig.hpp"

namespace hpcrun::gateway {

/// `[docker:][registry/]repository[:tag][@digest]`, normalized.
struct ImageReference {
    std::string registry;
    std::string repository;
    std::string tag;
    /// "algorithm:hex" or empty
    std::string digest;

    /// Fully qualified form, always including the registry, so that parsing it
    /// yields this reference again.
    std::string render() const;
    /// repository[:tag][@digest] as users usually type it.
    std::string shortName() const;

    bool operator==(const ImageReference&) const = default;
};

std::ostream& operator<<(std::ostream& os, const ImageReference& ref);

/// Parses and normalizes a user-supplied reference. A leading `docker:` scheme
/// is stripped, a missing registry becomes `defaultRegistry` and a missing tag
/// becomes "latest" unless a digest pins the image.
/// Throws Error(MalformedReference).
ImageReference parseImageReference(std::string_view raw,
                                   std::string_view defaultRegistry = config::defaultRegistry);

}
