#include "hpcrun/runtime/MountPlan.hpp"

#include <algorithm>
#include <map>
#include <sstream>

#include "hpcrun/common/Error.hpp"
#include "hpcrun/common/Path.hpp"

namespace hpcrun::runtime {

size_t MountPlan::count(MountOrigin origin) const {
    return static_cast<size_t>(
        std::count_if(entries.begin(), entries.end(), [&](const MountEntry& e) { return e.origin == origin; }));
}

size_t MountPlan::count(MountKind kind) const {
    return static_cast<size_t>(
        std::count_if(entries.begin(), entries.end(), [&](const MountEntry& e) { return e.kind == kind; }));
}

MountPlan buildMountPlan(const LaunchSpec& spec, const imagefs::PackedImage& image, const config::SiteConfig& site,
                         const gpu::GpuInjectionPlan* gpu, const mpi::MpiInjectionPlan* mpi) {
    MountPlan plan;
    plan.entries.push_back({image.path.string(), "/", MountKind::ImageRoot, false, MountOrigin::Image});
    for (const auto& mount : site.siteMounts) {
        plan.entries.push_back({mount.hostPath, mount.containerPath, MountKind::BindDir, mount.writable,
                                MountOrigin::Site});
    }
    if (gpu) {
        for (const auto* group : {&gpu->deviceMounts, &gpu->libraryMounts, &gpu->binaryMounts}) {
            plan.entries.insert(plan.entries.end(), group->begin(), group->end());
        }
    }
    if (mpi) {
        for (const auto* group : {&mpi->libraryOvermounts, &mpi->dependencyMounts, &mpi->configMounts}) {
            plan.entries.insert(plan.entries.end(), group->begin(), group->end());
        }
    }
    for (const auto& volume : spec.volumes) {
        plan.entries.push_back({volume.hostPath, volume.containerPath, MountKind::BindDir, volume.writable,
                                MountOrigin::User});
    }

    std::map<std::string, size_t> targets;
    for (size_t i = 0; i < plan.entries.size(); ++i) {
        auto& entry = plan.entries[i];
        auto normalized = path::normalizeAbsolute(entry.target);
        if (!normalized) {
            throw Error(ErrorCode::TargetEscape, "mount target '" + entry.target + "' (" +
                                                     std::string(mountOriginName(entry.origin)) +
                                                     ") is not inside the container root");
        }
        entry.target = *normalized;
        if (i > 0 && entry.target == "/") {
            throw Error(ErrorCode::TargetConflict,
                        "graft of " + entry.source + " would replace the container root");
        }
        auto [it, inserted] = targets.emplace(entry.target, i);
        if (!inserted) {
            const auto& first = plan.entries[it->second];
            throw Error(ErrorCode::TargetConflict, "mount target " + entry.target + " requested by " +
                                                       std::string(mountOriginName(first.origin)) + " (" +
                                                       first.source + ") and " +
                                                       std::string(mountOriginName(entry.origin)) + " (" +
                                                       entry.source + ")");
        }
    }
    return plan;
}

std::string describePlan(const MountPlan& plan) {
    std::ostringstream out;
    for (size_t i = 0; i < plan.entries.size(); ++i) {
        const auto& e = plan.entries[i];
        out << i << ' ' << mountKindName(e.kind) << ' ' << mountOriginName(e.origin) << ' ' << e.source << " -> "
            << e.target << (e.writable ? " (rw)" : " (ro)") << '\n';
    }
    return out.str();
}

}
