#pragma once

#include <string>
#include <vector>

#include "hpcrun/config/SiteConfig.hpp"
#include "hpcrun/gpu/GpuInjector.hpp"
#include "hpcrun/imagefs/Pack.hpp"
#include "hpcrun/mpi/MpiInjector.hpp"
#include "hpcrun/runtime/LaunchSpec.hpp"
#include "hpcrun/runtime/MountEntry.hpp"

namespace hpcrun::runtime {

/// Image root first, then site grafts, GPU, MPI and user volumes.
struct MountPlan {
    std::vector<MountEntry> entries;

    size_t count(MountOrigin origin) const;
    size_t count(MountKind kind) const;
    bool operator==(const MountPlan&) const = default;
};

/// Pure function of its inputs. Throws Error(TargetEscape) for a target that is
/// not absolute or climbs above "/", Error(TargetConflict) when two entries
/// share a target.
MountPlan buildMountPlan(const LaunchSpec& spec, const imagefs::PackedImage& image, const config::SiteConfig& site,
                         const gpu::GpuInjectionPlan* gpu, const mpi::MpiInjectionPlan* mpi);

/// One line per entry: "<index> <KIND> <origin> <source> -> <target> (ro|rw)".
std::string describePlan(const MountPlan& plan);

}
