#include "hpcrun/gateway/ImageReference.hpp"

#include <algorithm>
#include <cctype>
#include <vector>

#include "hpcrun/common/Error.hpp"

namespace hpcrun::gateway {

namespace {

constexpr std::string_view defaultTag = "latest";

[[noreturn]] void malformed(std::string_view raw, const std::string& why) {
    throw Error(ErrorCode::MalformedReference, "malformed image reference '" + std::string(raw) + "': " + why);
}

bool isLowerAlnum(char c) {
    return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9');
}

// [a-z0-9]+((\.|_|__|-+)[a-z0-9]+)*
bool isPathComponent(std::string_view s) {
    if (s.empty() || !isLowerAlnum(s.front()) || !isLowerAlnum(s.back())) {
        return false;
    }
    for (size_t i = 0; i < s.size();) {
        if (isLowerAlnum(s[i])) {
            ++i;
            continue;
        }
        size_t runStart = i;
        while (i < s.size() && !isLowerAlnum(s[i])) {
            ++i;
        }
        auto separator = s.substr(runStart, i - runStart);
        bool dashes = separator.find_first_not_of('-') == std::string_view::npos;
        if (!(separator == "." || separator == "_" || separator == "__" || dashes)) {
            return false;
        }
    }
    return true;
}

// [A-Za-z0-9_][A-Za-z0-9_.-]{0,127}
bool isTag(std::string_view s) {
    if (s.empty() || s.size() > 128) {
        return false;
    }
    auto word = [](char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; };
    if (!word(s.front())) {
        return false;
    }
    for (char c : s) {
        if (!(word(c) || c == '.' || c == '-')) {
            return false;
        }
    }
    return true;
}

// algorithm ":" encoded, algorithm [a-z0-9]+([+._-][a-z0-9]+)*, encoded [a-zA-Z0-9=_-]{32,}
bool isDigest(std::string_view s) {
    auto colon = s.find(':');
    if (colon == std::string_view::npos || colon == 0) {
        return false;
    }
    auto algorithm = s.substr(0, colon);
    auto encoded = s.substr(colon + 1);
    if (!isLowerAlnum(algorithm.front()) || !isLowerAlnum(algorithm.back())) {
        return false;
    }
    for (size_t i = 0; i < algorithm.size(); ++i) {
        char c = algorithm[i];
        bool separator = c == '+' || c == '.' || c == '_' || c == '-';
        if (!(isLowerAlnum(c) || (separator && isLowerAlnum(algorithm[i - 1])))) {
            return false;
        }
    }
    size_t hexLength = algorithm == "sha256" ? 64 : algorithm == "sha512" ? 128 : 0;
    if (hexLength != 0) {
        return encoded.size() == hexLength && std::all_of(encoded.begin(), encoded.end(), [](char c) {
                   return std::isxdigit(static_cast<unsigned char>(c)) && !std::isupper(static_cast<unsigned char>(c));
               });
    }
    if (encoded.size() < 32) {
        return false;
    }
    return std::all_of(encoded.begin(), encoded.end(), [](char c) {
        return std::isalnum(static_cast<unsigned char>(c)) || c == '=' || c == '_' || c == '-';
    });
}

// host[:port], host made of dns labels
bool isRegistry(std::string_view s) {
    auto colon = s.rfind(':');
    auto host = s.substr(0, colon);
    if (colon != std::string_view::npos) {
        auto port = s.substr(colon + 1);
        if (port.empty() || port.size() > 5) {
            return false;
        }
        for (char c : port) {
            if (!std::isdigit(static_cast<unsigned char>(c))) {
                return false;
            }
        }
    }
    if (host.empty()) {
        return false;
    }
    // labels of [A-Za-z0-9] with inner dashes, separated by single dots
    size_t pos = 0;
    while (pos <= host.size()) {
        auto next = host.find('.', pos);
        if (next == std::string_view::npos) {
            next = host.size();
        }
        auto label = host.substr(pos, next - pos);
        auto alnum = [](char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; };
        if (label.empty() || !alnum(label.front()) || !alnum(label.back())) {
            return false;
        }
        for (char c : label) {
            if (!(alnum(c) || c == '-')) {
                return false;
            }
        }
        pos = next + 1;
    }
    return true;
}

bool looksLikeRegistry(std::string_view component, std::string_view defaultRegistry) {
    return component.find('.') != std::string_view::npos || component.find(':') != std::string_view::npos ||
           component == "localhost" || component == defaultRegistry ||
           std::any_of(component.begin(), component.end(), [](char c) { return std::isupper(static_cast<unsigned char>(c)); });
}

}

std::string ImageReference::render() const {
    std::string out = registry + "/" + repository;
    if (!tag.empty()) {
        out += ":" + tag;
    }
    if (!digest.empty()) {
        out += "@" + digest;
    }
    return out;
}

std::string ImageReference::shortName() const {
    std::string out = repository;
    if (!tag.empty()) {
        out += ":" + tag;
    }
    if (!digest.empty()) {
        out += "@" + digest;
    }
    return out;
}

std::ostream& operator<<(std::ostream& os, const ImageReference& ref) {
    return os << ref.render();
}

ImageReference parseImageReference(std::string_view raw, std::string_view defaultRegistry) {
    if (raw.empty()) {
        malformed(raw, "empty reference");
    }
    std::string_view rest = raw;
    if (rest.rfind("docker:", 0) == 0) {
        rest.remove_prefix(7);
        // "docker://" URL form
        while (!rest.empty() && rest.front() == '/') {
            rest.remove_prefix(1);
        }
    }
    if (rest.empty()) {
        malformed(raw, "empty reference");
    }

    ImageReference ref;
    auto at = rest.find('@');
    if (at != std::string_view::npos) {
        if (rest.find('@', at + 1) != std::string_view::npos) {
            malformed(raw, "more than one '@'");
        }
        ref.digest = std::string(rest.substr(at + 1));
        rest = rest.substr(0, at);
        if (!isDigest(ref.digest)) {
            malformed(raw, "invalid digest '" + ref.digest + "'");
        }
    }

    auto firstSlash = rest.find('/');
    if (firstSlash != std::string_view::npos && looksLikeRegistry(rest.substr(0, firstSlash), defaultRegistry)) {
        ref.registry = std::string(rest.substr(0, firstSlash));
        rest = rest.substr(firstSlash + 1);
        if (!isRegistry(ref.registry)) {
            malformed(raw, "invalid registry '" + ref.registry + "'");
        }
    } else {
        ref.registry = std::string(defaultRegistry);
    }

    auto lastSlash = rest.rfind('/');
    auto colon = rest.find(':', lastSlash == std::string_view::npos ? 0 : lastSlash);
    if (colon != std::string_view::npos) {
        ref.tag = std::string(rest.substr(colon + 1));
        rest = rest.substr(0, colon);
        if (!isTag(ref.tag)) {
            malformed(raw, "invalid tag '" + ref.tag + "'");
        }
    }

    if (rest.empty()) {
        malformed(raw, "empty repository");
    }
    size_t pos = 0;
    while (pos <= rest.size()) {
        auto next = rest.find('/', pos);
        if (next == std::string_view::npos) {
            next = rest.size();
        }
        if (!isPathComponent(rest.substr(pos, next - pos))) {
            malformed(raw, "invalid repository '" + std::string(rest) + "'");
        }
        pos = next + 1;
    }
    ref.repository = std::string(rest);
    if (ref.repository.size() > 255) {
        malformed(raw, "repository name too long");
    }

    if (ref.tag.empty() && ref.digest.empty()) {
        ref.tag = std::string(defaultTag);
    }
    return ref;
}

}
