#pragma once

#include <chrono>
#include <string>

namespace hpcrun {

/// UTC, microsecond precision: 2017-05-04T10:11:12.123456Z
std::string isoTimestamp(std::chrono::system_clock::time_point when = std::chrono::system_clock::now());

}
