#include "Common.hpp"

#include <cctype>

namespace hpcrun::cli {

std::string describeCode(ErrorCode code) {
    std::string text(errorCodeName(code));
    for (auto& c : text) {
        c = c == '_' ? ' ' : static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    }
    return text;
}

config::SiteConfig loadSiteConfig() {
    return config::loadConfig(config::configPathFromEnvironment());
}

}
