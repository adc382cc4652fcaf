#pragma once

#include <string>

#include "hpcrun/common/Error.hpp"
#include "hpcrun/config/SiteConfig.hpp"

namespace hpcrun::cli {

/// "IMAGE_NOT_FOUND" -> "image not found"
std::string describeCode(ErrorCode code);

config::SiteConfig loadSiteConfig();

}
