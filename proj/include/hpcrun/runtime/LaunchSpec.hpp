#pragma once

#include <map>
#include <string>
#include <sys/types.h>
#include <vector>

#include "hpcrun/gateway/ImageReference.hpp"

namespace hpcrun::runtime {

struct Volume {
    std::string hostPath;
    std::string containerPath;
    bool writable = true;

    bool operator==(const Volume&) const = default;
};

struct LaunchSpec {
    gateway::ImageReference image;
    /// Empty means: run the image's entrypoint + cmd.
    std::vector<std::string> argv;
    bool mpi = false;
    std::vector<Volume> volumes;
    uid_t uid = 0;
    gid_t gid = 0;
    std::map<std::string, std::string> hostEnv;
};

}
