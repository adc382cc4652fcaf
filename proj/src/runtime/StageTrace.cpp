#include "hpcrun/runtime/StageTrace.hpp"

#include <sstream>

#include "hpcrun/common/Time.hpp"

namespace hpcrun::runtime {

namespace {

constexpr std::string_view failedPrefix = "FAILED: ";

size_t rank(Stage stage) {
    return static_cast<size_t>(stage);
}

}

std::string_view stageName(Stage stage) {
    switch (stage) {
    case Stage::Prepare:
        return "PREPARE";
    case Stage::Mount:
        return "MOUNT";
    case Stage::Chroot:
        return "CHROOT";
    case Stage::DropPrivileges:
        return "DROP_PRIVILEGES";
    case Stage::ExportEnv:
        return "EXPORT_ENV";
    case Stage::Exec:
        return "EXEC";
    case Stage::Cleanup:
        return "CLEANUP";
    }
    return "?";
}

std::optional<Stage> stageFromName(std::string_view name) {
    for (auto stage : canonicalStages) {
        if (stageName(stage) == name) {
            return stage;
        }
    }
    return std::nullopt;
}

StageTrace::~StageTrace() = default;
StageTrace::StageTrace(StageTrace&&) noexcept = default;
StageTrace& StageTrace::operator=(StageTrace&&) noexcept = default;

void StageTrace::attach(std::FILE* file) {
    file_ = file;
    for (const auto& event : events_) {
        emit(event);
    }
}

void StageTrace::emit(const StageEvent& event) {
    if (file_) {
        auto line = formatEvent(event) + "\n";
        std::fwrite(line.data(), 1, line.size(), file_);
        std::fflush(file_);
    }
}

void StageTrace::record(Stage stage, std::string detail, std::string timestamp) {
    StageEvent event{stage, timestamp.empty() ? isoTimestamp() : std::move(timestamp), std::move(detail), false};
    events_.push_back(event);
    emit(events_.back());
}

void StageTrace::recordFailure(Stage stage, const std::string& reason, std::string timestamp) {
    StageEvent event{stage, timestamp.empty() ? isoTimestamp() : std::move(timestamp),
                     std::string(failedPrefix) + reason, true};
    events_.push_back(event);
    emit(events_.back());
}

void StageTrace::markFailed(Stage stage, const std::string& reason) {
    for (auto it = events_.rbegin(); it != events_.rend(); ++it) {
        if (it->stage == stage) {
            it->failed = true;
            it->detail = std::string(failedPrefix) + reason;
            // The file already has the original line; append the amended one.
            emit(*it);
            return;
        }
    }
    recordFailure(stage, reason);
}

bool StageTrace::contains(Stage stage) const {
    for (const auto& event : events_) {
        if (event.stage == stage) {
            return true;
        }
    }
    return false;
}

std::string formatEvent(const StageEvent& event) {
    std::string line = event.timestamp + " " + std::string(stageName(event.stage));
    if (!event.detail.empty()) {
        line += " " + event.detail;
    }
    return line;
}

std::string StageTrace::serialize() const {
    std::string out;
    for (const auto& event : events_) {
        out += formatEvent(event) + "\n";
    }
    return out;
}

std::vector<StageEvent> StageTrace::parse(const std::string& text) {
    std::vector<StageEvent> events;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        auto first = line.find(' ');
        if (first == std::string::npos) {
            continue;
        }
        auto second = line.find(' ', first + 1);
        auto name = line.substr(first + 1, second == std::string::npos ? std::string::npos : second - first - 1);
        auto stage = stageFromName(name);
        if (!stage) {
            continue;
        }
        StageEvent event;
        event.stage = *stage;
        event.timestamp = line.substr(0, first);
        event.detail = second == std::string::npos ? std::string() : line.substr(second + 1);
        event.failed = event.detail.rfind(failedPrefix, 0) == 0;
        // An amended line replaces the earlier record of the same stage.
        if (!events.empty() && events.back().stage == event.stage) {
            events.back() = event;
        } else {
            events.push_back(event);
        }
    }
    return events;
}

std::optional<std::string> checkTraceInvariants(const std::vector<StageEvent>& events) {
    if (events.empty()) {
        return "trace is empty";
    }
    if (events.back().stage != Stage::Cleanup) {
        return "last event is " + std::string(stageName(events.back().stage)) + ", not CLEANUP";
    }
    bool dropped = false;
    bool failed = false;
    for (size_t i = 0; i < events.size(); ++i) {
        const auto& event = events[i];
        if (event.stage == Stage::Mount && dropped) {
            return "MOUNT after DROP_PRIVILEGES";
        }
        if (event.stage == Stage::DropPrivileges) {
            dropped = true;
        }
        if (i + 1 < events.size()) {
            if (failed) {
                return std::string(stageName(event.stage)) + " after a failed stage";
            }
            // Before CLEANUP the stages must be exactly a prefix of the canonical order.
            if (rank(event.stage) != i) {
                return "unexpected " + std::string(stageName(event.stage)) + " at position " + std::to_string(i);
            }
        }
        failed = failed || event.failed;
    }
    return std::nullopt;
}

}
