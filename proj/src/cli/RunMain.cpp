#include "hpcrun/cli/Cli.hpp"

#include <cstdio>
#include <fcntl.h>
#include <iostream>
#include <set>
#include <sys/fsuid.h>
#include <unistd.h>

#include <CLI11.hpp>

#include "Common.hpp"
#include "hpcrun/common/Path.hpp"
#include "hpcrun/gateway/ImageGateway.hpp"
#include "hpcrun/runtime/ExitCodes.hpp"
#include "hpcrun/runtime/Runtime.hpp"

namespace hpcrun::cli {

namespace {

const std::set<std::string> valueOptions = {"--image", "--volume", "--trace", "--fault", "--user"};

/// Splits argv into runtime options and the container command. The command
/// starts at the first token that is not an option (or right after "--") and
/// is passed on byte for byte.
std::pair<std::vector<std::string>, std::vector<std::string>> splitArguments(int argc, char** argv) {
    std::vector<std::string> options;
    std::vector<std::string> command;
    int i = 1;
    for (; i < argc; ++i) {
        std::string arg = argv[i];
        if (arg == "--") {
            ++i;
            break;
        }
        if (arg.empty() || arg[0] != '-') {
            break;
        }
        options.push_back(arg);
        if (valueOptions.count(arg) && i + 1 < argc) {
            options.push_back(argv[++i]);
        }
    }
    for (; i < argc; ++i) {
        command.emplace_back(argv[i]);
    }
    return {options, command};
}

runtime::Volume parseVolume(const std::string& text) {
    runtime::Volume volume;
    auto first = text.find(':');
    if (first == std::string::npos) {
        throw CLI::ValidationError("--volume", "expected src:dst[:ro|rw], got '" + text + "'");
    }
    volume.hostPath = text.substr(0, first);
    auto rest = text.substr(first + 1);
    auto second = rest.find(':');
    volume.containerPath = rest.substr(0, second);
    if (second != std::string::npos) {
        auto mode = rest.substr(second + 1);
        if (mode != "ro" && mode != "rw") {
            throw CLI::ValidationError("--volume", "mode must be ro or rw, got '" + mode + "'");
        }
        volume.writable = mode == "rw";
    }
    if (volume.hostPath.empty() || volume.hostPath[0] != '/' || !path::normalizeAbsolute(volume.containerPath)) {
        throw CLI::ValidationError("--volume", "both paths must be absolute in '" + text + "'");
    }
    volume.containerPath = *path::normalizeAbsolute(volume.containerPath);
    return volume;
}

/// The trace file is opened with the invoking user's file-system identity.
std::FILE* openTrace(const std::string& path) {
    auto previousUid = ::setfsuid(::getuid());
    auto previousGid = ::setfsgid(::getgid());
    int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_NOFOLLOW | O_CLOEXEC, 0644);
    ::setfsgid(static_cast<gid_t>(previousGid));
    ::setfsuid(static_cast<uid_t>(previousUid));
    if (fd < 0) {
        return nullptr;
    }
    return ::fdopen(fd, "w");
}

}

int runMain(int argc, char** argv) {
    auto [optionArgs, command] = splitArguments(argc, argv);

    CLI::App app{"Run a command inside a container image from the site image store.", "run"};
    app.usage("run --image=<ref> [--mpi] [--volume=src:dst[:ro]]... [--trace=path] [--] command [args...]");
    std::string imageRef;
    bool mpi = false;
    std::vector<std::string> volumes;
    std::string tracePath;
    std::string fault;
    std::string user;
    app.add_option("--image", imageRef, "Image reference (must be READY in the catalog)")->required();
    app.add_flag("--mpi", mpi, "Swap the image's MPI libraries for the host's ABI-compatible ones");
    app.add_option("--volume", volumes, "Bind mount host src at container dst (repeatable, default rw)");
    app.add_option("--trace", tracePath, "Write the stage trace to this file");
    app.add_option("--fault", fault, "Fail on purpose at STAGE or MOUNT:<entry> (testing aid)")->group("");
    app.add_option("--user", user, "Run as uid:gid (only when invoked by root)")->group("");

    std::vector<std::string> reversed(optionArgs.rbegin(), optionArgs.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        int status = app.exit(e);
        return status == 0 ? 0 : runtime::exitcode::usage;
    }

    runtime::LaunchSpec spec;
    runtime::LaunchOptions options;
    spec.argv = command;
    spec.mpi = mpi;
    spec.uid = ::getuid();
    spec.gid = ::getgid();
    try {
        for (const auto& volume : volumes) {
            spec.volumes.push_back(parseVolume(volume));
        }
        if (!user.empty()) {
            auto colon = user.find(':');
            if (::getuid() != 0) {
                throw CLI::ValidationError("--user", "only root may choose the container user");
            }
            if (colon == std::string::npos) {
                throw CLI::ValidationError("--user", "expected uid:gid");
            }
            spec.uid = static_cast<uid_t>(std::stoul(user.substr(0, colon)));
            spec.gid = static_cast<gid_t>(std::stoul(user.substr(colon + 1)));
        }
        if (!fault.empty()) {
            options.fault = runtime::parseFault(fault);
        }
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return runtime::exitcode::usage;
    } catch (const std::exception& e) {
        std::cerr << "run: " << e.what() << '\n';
        return runtime::exitcode::usage;
    }

    config::SiteConfig site;
    imagefs::PackedImage packed;
    try {
        site = loadSiteConfig();
        gateway::ImageGateway gateway(site);
        spec.image = gateway.parse(imageRef);
        auto entry = gateway.lookup(spec.image);
        packed = gateway.packedImage(entry);
    } catch (const Error& e) {
        std::cerr << "run: " << describeCode(e.code()) << ": " << e.what() << '\n';
        return runtime::exitCodeFor(e.code());
    } catch (const std::exception& e) {
        std::cerr << "run: " << e.what() << '\n';
        return runtime::exitcode::internal;
    }
    spec.hostEnv = runtime::currentEnvironment();

    std::FILE* trace = nullptr;
    if (!tracePath.empty()) {
        trace = openTrace(tracePath);
        if (!trace) {
            std::cerr << "run: cannot open trace file " << tracePath << '\n';
            return runtime::exitcode::usage;
        }
        options.traceFile = trace;
    }

    runtime::Runtime runtime(site);
    auto result = runtime.launch(spec, packed, options);
    for (const auto& warning : result.warnings) {
        std::cerr << "run: warning: " << warning << '\n';
    }
    if (result.error) {
        std::cerr << "run: " << describeCode(*result.error) << ": " << result.message << '\n';
    }
    if (result.pendingCleanup) {
        try {
            result.pendingCleanup->cleanup();
        } catch (const std::exception& e) {
            std::cerr << "run: warning: cleanup retry failed: " << e.what() << '\n';
        }
    }
    if (trace) {
        std::fclose(trace);
    }
    return result.exitStatus;
}

}
