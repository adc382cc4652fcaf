#pragma once

#include <optional>
#include <string>
#include <vector>

namespace hpcrun::process {

/// Runs argv (PATH lookup) to completion with stdout/stderr discarded.
/// Returns the exit status, or -1 when the program could not be started.
int runQuiet(const std::vector<std::string>& argv);

/// Locates `program` on $PATH.
std::optional<std::string> findOnPath(const std::string& program);

}
