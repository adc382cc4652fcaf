#pragma once

#include <array>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace hpcrun::runtime {

enum class Stage { Prepare, Mount, Chroot, DropPrivileges, ExportEnv, Exec, Cleanup };

inline constexpr std::array<Stage, 7> canonicalStages = {
    Stage::Prepare, Stage::Mount, Stage::Chroot, Stage::DropPrivileges, Stage::ExportEnv, Stage::Exec, Stage::Cleanup,
};

std::string_view stageName(Stage stage);
std::optional<Stage> stageFromName(std::string_view name);

struct StageEvent {
    Stage stage = Stage::Prepare;
    std::string timestamp;
    std::string detail;
    bool failed = false;
};

/// Ordered record of the launch pipeline. Lines are "<timestamp> <STAGE> <detail>";
/// a failed stage's detail starts with "FAILED: ".
class StageTrace {
public:
    StageTrace() = default;
    ~StageTrace();
    StageTrace(const StageTrace&) = delete;
    StageTrace& operator=(const StageTrace&) = delete;
    StageTrace(StageTrace&&) noexcept;
    StageTrace& operator=(StageTrace&&) noexcept;

    /// Streams each event to `file` as it is recorded (opened by the caller).
    void attach(std::FILE* file);

    void record(Stage stage, std::string detail, std::string timestamp = {});
    void recordFailure(Stage stage, const std::string& reason, std::string timestamp = {});
    /// Turns the latest event for `stage` into a failure (a stage that was
    /// announced and then failed).
    void markFailed(Stage stage, const std::string& reason);

    const std::vector<StageEvent>& events() const { return events_; }
    bool contains(Stage stage) const;
    std::string serialize() const;

    static std::vector<StageEvent> parse(const std::string& text);

private:
    void emit(const StageEvent& event);

    std::vector<StageEvent> events_;
    std::FILE* file_ = nullptr;
};

std::string formatEvent(const StageEvent& event);

/// The ordering invariants a finished launch must satisfy: stages appear at
/// most once and in canonical order, CLEANUP is present and last, nothing
/// follows a failed stage except CLEANUP, and no MOUNT follows DROP_PRIVILEGES.
/// Returns a description of the first violation, or nullopt.
std::optional<std::string> checkTraceInvariants(const std::vector<StageEvent>& events);

}
