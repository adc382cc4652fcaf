#include <doctest.h>

#include <cstdio>
#include <random>

#include "hpcrun/common/Error.hpp"
#include "hpcrun/runtime/ExitCodes.hpp"
#include "hpcrun/runtime/Runtime.hpp"
#include "hpcrun/runtime/StageTrace.hpp"

using namespace hpcrun;
using namespace hpcrun::runtime;

namespace {

// Valid iff the events before the last form a canonical prefix with at most a
// failure at its final element, and the last event is a single CLEANUP.
bool traceOracle(const std::vector<StageEvent>& events) {
    if (events.empty() || events.back().stage != Stage::Cleanup) {
        return false;
    }
    for (size_t i = 0; i + 1 < events.size(); ++i) {
        if (i >= canonicalStages.size() - 1 || events[i].stage != canonicalStages[i]) {
            return false;
        }
        if (events[i].failed && i + 2 != events.size()) {
            return false;
        }
    }
    return true;
}

}

TEST_CASE("stage names round trip") {
    std::vector<std::string> names;
    for (auto stage : canonicalStages) {
        names.emplace_back(stageName(stage));
        CHECK(stageFromName(stageName(stage)) == stage);
    }
    CHECK(names ==
          std::vector<std::string>{"PREPARE", "MOUNT", "CHROOT", "DROP_PRIVILEGES", "EXPORT_ENV", "EXEC", "CLEANUP"});
    CHECK_FALSE(stageFromName("prepare").has_value());
    CHECK_FALSE(stageFromName("").has_value());
}

TEST_CASE("traces serialize and parse back") {
    StageTrace trace;
    trace.record(Stage::Prepare, "launch=1 image=abc", "2026-01-01T00:00:00.000Z");
    trace.record(Stage::Mount, "3 grafts", "2026-01-01T00:00:00.001Z");
    trace.recordFailure(Stage::Chroot, "no such directory", "2026-01-01T00:00:00.002Z");
    trace.record(Stage::Cleanup, "released 3 grafts and the image root", "2026-01-01T00:00:00.003Z");
    auto text = trace.serialize();
    CHECK(text ==
          "2026-01-01T00:00:00.000Z PREPARE launch=1 image=abc\n"
          "2026-01-01T00:00:00.001Z MOUNT 3 grafts\n"
          "2026-01-01T00:00:00.002Z CHROOT FAILED: no such directory\n"
          "2026-01-01T00:00:00.003Z CLEANUP released 3 grafts and the image root\n");
    auto parsed = StageTrace::parse(text);
    REQUIRE(parsed.size() == 4);
    CHECK(parsed[2].failed);
    CHECK(parsed[2].detail == "FAILED: no such directory");
    CHECK(parsed[3].detail == "released 3 grafts and the image root");
    CHECK_FALSE(checkTraceInvariants(parsed).has_value());
    CHECK(trace.contains(Stage::Chroot));
    CHECK_FALSE(trace.contains(Stage::Exec));
}

TEST_CASE("a stage announced then failed is one event") {
    StageTrace trace;
    std::FILE* sink = std::tmpfile();
    REQUIRE(sink != nullptr);
    trace.attach(sink);
    trace.record(Stage::Prepare, "ok", "t0");
    trace.record(Stage::Mount, "mounting", "t1");
    trace.markFailed(Stage::Mount, "entry 2 denied");
    trace.record(Stage::Cleanup, "nothing to release", "t2");
    std::fflush(sink);
    std::rewind(sink);
    std::string streamed;
    char buffer[512];
    while (size_t n = std::fread(buffer, 1, sizeof buffer, sink)) {
        streamed.append(buffer, n);
    }
    std::fclose(sink);
    CHECK(trace.events().size() == 3);
    CHECK(trace.events()[1].failed);
    auto parsed = StageTrace::parse(streamed);
    REQUIRE(parsed.size() == 3);
    CHECK(parsed[1].stage == Stage::Mount);
    CHECK(parsed[1].failed);
    CHECK(parsed[1].detail.find("entry 2 denied") != std::string::npos);
    CHECK_FALSE(checkTraceInvariants(parsed).has_value());
}

TEST_CASE("invariant violations are named") {
    auto events = [](std::vector<std::pair<Stage, bool>> list) {
        std::vector<StageEvent> out;
        for (auto [stage, failed] : list) {
            out.push_back({stage, "t", failed ? "FAILED: x" : "ok", failed});
        }
        return out;
    };
    CHECK(checkTraceInvariants({}).has_value());
    CHECK(checkTraceInvariants(events({{Stage::Prepare, false}})).has_value());
    CHECK(checkTraceInvariants(events({{Stage::Mount, false}, {Stage::Cleanup, false}})).has_value());
    CHECK(checkTraceInvariants(
              events({{Stage::Prepare, true}, {Stage::Mount, false}, {Stage::Cleanup, false}}))
              .has_value());
    CHECK(checkTraceInvariants(events({{Stage::Prepare, false},
                                       {Stage::Mount, false},
                                       {Stage::Chroot, false},
                                       {Stage::DropPrivileges, false},
                                       {Stage::Mount, false},
                                       {Stage::Cleanup, false}}))
              .has_value());
    CHECK_FALSE(checkTraceInvariants(events({{Stage::Cleanup, false}})).has_value());
    CHECK_FALSE(checkTraceInvariants(events({{Stage::Prepare, true}, {Stage::Cleanup, false}})).has_value());
}

TEST_CASE("random event sequences agree with the ordering oracle") {
    std::mt19937_64 rng(0x7ace0001);
    int valid = 0;
    for (int i = 0; i < 20000; ++i) {
        std::vector<StageEvent> events;
        bool structured = rng() % 2 == 0;
        if (structured) {
            size_t length = rng() % 7;
            for (size_t s = 0; s < length; ++s) {
                events.push_back({canonicalStages[s], "t", "ok", false});
            }
            if (!events.empty() && rng() % 2 == 0) {
                events[rng() % events.size()].failed = true;
            }
            events.push_back({Stage::Cleanup, "t", "done", false});
            if (rng() % 4 == 0) {
                auto at = rng() % events.size();
                events[at].stage = canonicalStages[rng() % 7];
            }
        } else {
            size_t length = rng() % 9;
            for (size_t s = 0; s < length; ++s) {
                events.push_back({canonicalStages[rng() % 7], "t", "x", rng() % 5 == 0});
            }
        }
        bool expected = traceOracle(events);
        auto violation = checkTraceInvariants(events);
        CHECK_MESSAGE(expected == !violation.has_value(), violation.value_or("accepted"));
        valid += expected ? 1 : 0;
    }
    CHECK(valid > 3000);
}

TEST_CASE("fault specifications") {
    CHECK(parseFault("EXEC").stage == Stage::Exec);
    CHECK_FALSE(parseFault("EXEC").mountEntry.has_value());
    auto mount = parseFault("MOUNT:3");
    CHECK(mount.mountEntry == 3u);
    CHECK_FALSE(mount.stage.has_value());
    for (const char* bad : {"", "exec", "MOUNT:", "MOUNT:x", "EXEC:1", "NOPE"}) {
        CHECK_THROWS_AS(parseFault(bad), Error);
    }
}

TEST_CASE("runtime failures map to fixed exit statuses") {
    const std::vector<std::pair<ErrorCode, int>> table = {
        {ErrorCode::ParseError, 201},        {ErrorCode::ValidationError, 201},   {ErrorCode::MissingRequired, 201},
        {ErrorCode::CatalogCorrupt, 201},    {ErrorCode::MalformedReference, 202}, {ErrorCode::ImageNotFound, 202},
        {ErrorCode::ImageNotReady, 203},     {ErrorCode::CorruptPack, 204},        {ErrorCode::TargetConflict, 205},
        {ErrorCode::TargetEscape, 205},      {ErrorCode::MountFailed, 206},        {ErrorCode::MountDenied, 206},
        {ErrorCode::StorageFull, 206},       {ErrorCode::IsolationFailed, 207},    {ErrorCode::DropFailed, 208},
        {ErrorCode::ExecNotFound, 127},      {ErrorCode::MissingDriverLibrary, 209},
        {ErrorCode::MissingDeviceFile, 209}, {ErrorCode::UnparseableAbi, 210},     {ErrorCode::BaseNameMismatch, 210},
        {ErrorCode::AbiIncompatible, 210},   {ErrorCode::NoContainerMpi, 210},     {ErrorCode::Internal, 200},
    };
    for (auto [code, status] : table) {
        CHECK(exitCodeFor(code) == status);
    }
}
