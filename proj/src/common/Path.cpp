#include "hpcrun/common/Path.hpp"

#include <vector>

#include <sys/stat.h>
#include <unistd.h>

#include "hpcrun/common/Error.hpp"

namespace hpcrun::path {

namespace {

std::vector<std::string> splitComponents(std::string_view raw) {
    std::vector<std::string> out;
    size_t pos = 0;
    while (pos <= raw.size()) {
        auto next = raw.find('/', pos);
        if (next == std::string_view::npos) {
            next = raw.size();
        }
        auto part = raw.substr(pos, next - pos);
        if (!part.empty()) {
            out.emplace_back(part);
        }
        pos = next + 1;
    }
    return out;
}

// Applies "." and ".." to a component stack; false when ".." underflows.
bool collapse(const std::vector<std::string>& parts, std::vector<std::string>& stack) {
    for (const auto& part : parts) {
        if (part == ".") {
            continue;
        }
        if (part == "..") {
            if (stack.empty()) {
                return false;
            }
            stack.pop_back();
            continue;
        }
        stack.push_back(part);
    }
    return true;
}

std::string join(const std::vector<std::string>& parts) {
    std::string out;
    for (const auto& part : parts) {
        if (!out.empty()) {
            out.push_back('/');
        }
        out += part;
    }
    return out;
}

}

std::optional<std::string> normalizeRelative(std::string_view raw) {
    std::vector<std::string> stack;
    if (!collapse(splitComponents(raw), stack)) {
        return std::nullopt;
    }
    return join(stack);
}

std::optional<std::string> normalizeAbsolute(std::string_view raw) {
    if (raw.empty() || raw.front() != '/') {
        return std::nullopt;
    }
    auto relative = normalizeRelative(raw);
    if (!relative) {
        return std::nullopt;
    }
    return "/" + *relative;
}

bool isWithin(std::string_view parent, std::string_view child) {
    if (parent == "/") {
        return !child.empty() && child.front() == '/';
    }
    if (child.size() < parent.size() || child.substr(0, parent.size()) != parent) {
        return false;
    }
    return child.size() == parent.size() || child[parent.size()] == '/';
}

std::filesystem::path resolveInRoot(const std::filesystem::path& root,
                                    std::string_view containerPath,
                                    bool followLast) {
    constexpr int maxLinks = 40;
    int linksFollowed = 0;

    std::vector<std::string> resolved;
    auto pending = splitComponents(containerPath);
    // Components are consumed from the back of `todo`.
    std::vector<std::string> todo(pending.rbegin(), pending.rend());

    while (!todo.empty()) {
        auto part = std::move(todo.back());
        todo.pop_back();
        if (part == ".") {
            continue;
        }
        if (part == "..") {
            if (!resolved.empty()) {
                resolved.pop_back();
            }
            continue;
        }
        resolved.push_back(part);
        bool isLast = todo.empty();
        if (isLast && !followLast) {
            break;
        }
        auto hostPath = root / join(resolved);
        struct stat st {};
        if (::lstat(hostPath.c_str(), &st) != 0 || !S_ISLNK(st.st_mode)) {
            continue;
        }
        if (++linksFollowed > maxLinks) {
            throw Error(ErrorCode::TargetEscape, "too many symlinks resolving " + std::string(containerPath));
        }
        std::string target(static_cast<size_t>(st.st_size) + 1, '\0');
        auto length = ::readlink(hostPath.c_str(), target.data(), target.size());
        if (length < 0) {
            throwSystemError("readlink " + hostPath.string(), errno);
        }
        target.resize(static_cast<size_t>(length));
        resolved.pop_back();
        if (!target.empty() && target.front() == '/') {
            resolved.clear();
        }
        auto linkParts = splitComponents(target);
        for (auto it = linkParts.rbegin(); it != linkParts.rend(); ++it) {
            todo.push_back(*it);
        }
    }
    if (resolved.empty()) {
        return root;
    }
    return root / join(resolved);
}

}
