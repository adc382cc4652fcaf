#include "hpcrun/runtime/Runtime.hpp"

#include <atomic>
#include <cerrno>
#include <csignal>
#include <cstring>
#include <fcntl.h>
#include <fstream>
#include <grp.h>
#include <linux/capability.h>
#include <pwd.h>
#include <sched.h>
#include <sstream>
#include <sys/mount.h>
#include <sys/prctl.h>
#include <sys/stat.h>
#include <sys/syscall.h>
#include <sys/wait.h>
#include <unistd.h>

#include "hpcrun/common/Time.hpp"
#include "hpcrun/gpu/GpuInjector.hpp"
#include "hpcrun/mpi/MpiInjector.hpp"
#include "hpcrun/runtime/ExitCodes.hpp"

namespace hpcrun::runtime {

namespace {

constexpr const char* defaultContainerPath = "/usr/local/sbin:/usr/local/bin:/usr/sbin:/usr/bin:/sbin:/bin";
constexpr std::array<int, 6> forwardedSignals = {SIGINT, SIGTERM, SIGHUP, SIGQUIT, SIGUSR1, SIGUSR2};

std::atomic<pid_t> forwardTarget{0};

extern "C" void forwardSignal(int sig) {
    pid_t child = forwardTarget.load();
    if (child > 0) {
        ::kill(child, sig);
    }
}

class SignalForwarding {
public:
    SignalForwarding() {
        struct sigaction action {};
        action.sa_handler = forwardSignal;
        sigemptyset(&action.sa_mask);
        action.sa_flags = SA_RESTART;
        for (size_t i = 0; i < forwardedSignals.size(); ++i) {
            ::sigaction(forwardedSignals[i], &action, &previous_[i]);
        }
    }
    ~SignalForwarding() {
        forwardTarget.store(0);
        for (size_t i = 0; i < forwardedSignals.size(); ++i) {
            ::sigaction(forwardedSignals[i], &previous_[i], nullptr);
        }
    }

private:
    std::array<struct sigaction, forwardedSignals.size()> previous_{};
};

void writeAll(int fd, const std::string& data) {
    size_t done = 0;
    while (done < data.size()) {
        auto n = ::write(fd, data.data() + done, data.size() - done);
        if (n < 0 && errno == EINTR) {
            continue;
        }
        if (n <= 0) {
            return;
        }
        done += static_cast<size_t>(n);
    }
}

std::string oneLine(std::string text) {
    for (auto& c : text) {
        if (c == '\n' || c == '\t') {
            c = ' ';
        }
    }
    return text;
}

void writeIdMap(const char* file, const std::string& content) {
    int fd = ::open(file, O_WRONLY | O_CLOEXEC);
    if (fd < 0) {
        throwSystemError(std::string("cannot open ") + file, errno);
    }
    auto n = ::write(fd, content.data(), content.size());
    int saved = errno;
    ::close(fd);
    if (n != static_cast<ssize_t>(content.size())) {
        throw Error(ErrorCode::MountFailed, std::string("cannot write ") + file + ": " + std::strerror(saved));
    }
}

/// Private mount namespace; unprivileged callers get a user namespace that
/// maps their own ids, which grants mount rights inside it.
std::string enterMountNamespace() {
    std::string mode;
    if (::geteuid() == 0) {
        if (::unshare(CLONE_NEWNS) != 0) {
            throw Error(ErrorCode::MountFailed,
                        std::string("cannot create mount namespace: ") + std::strerror(errno));
        }
        mode = "mount-namespace";
    } else {
        auto uid = ::geteuid();
        auto gid = ::getegid();
        if (::unshare(CLONE_NEWUSER | CLONE_NEWNS) != 0) {
            throw Error(ErrorCode::MountFailed,
                        std::string("cannot create user namespace: ") + std::strerror(errno));
        }
        writeIdMap("/proc/self/setgroups", "deny");
        writeIdMap("/proc/self/uid_map", std::to_string(uid) + " " + std::to_string(uid) + " 1\n");
        writeIdMap("/proc/self/gid_map", std::to_string(gid) + " " + std::to_string(gid) + " 1\n");
        mode = "user-namespace";
    }
    if (::mount(nullptr, "/", nullptr, MS_REC | MS_PRIVATE, nullptr) != 0) {
        throw Error(ErrorCode::MountFailed, std::string("cannot make mounts private: ") + std::strerror(errno));
    }
    return mode;
}

std::vector<gid_t> supplementaryGroups(uid_t uid, gid_t gid) {
    std::vector<gid_t> groups{gid};
    struct passwd pw {};
    struct passwd* found = nullptr;
    std::vector<char> buffer(16384);
    if (::getpwuid_r(uid, &pw, buffer.data(), buffer.size(), &found) != 0 || !found) {
        return groups;
    }
    int count = 64;
    groups.resize(static_cast<size_t>(count));
    if (::getgrouplist(pw.pw_name, gid, groups.data(), &count) < 0) {
        groups.resize(static_cast<size_t>(count));
        ::getgrouplist(pw.pw_name, gid, groups.data(), &count);
    }
    groups.resize(static_cast<size_t>(count));
    return groups;
}

int lastCapability() {
    std::ifstream in("/proc/sys/kernel/cap_last_cap");
    int last = 40;
    in >> last;
    return last;
}

std::string lookupVariable(const std::vector<std::string>& env, const std::string& key) {
    for (const auto& entry : env) {
        if (entry.size() > key.size() && entry.compare(0, key.size(), key) == 0 && entry[key.size()] == '=') {
            return entry.substr(key.size() + 1);
        }
    }
    return {};
}

std::string imageVariable(const imagefs::ImageConfig& config, const std::string& key) {
    return lookupVariable(config.env, key);
}

/// Everything the child needs, computed before fork.
struct ChildPlan {
    fs::path root;
    std::string workdir;
    uid_t uid = 0;
    gid_t gid = 0;
    std::vector<gid_t> groups;
    bool userNamespace = false;
    int lastCap = 40;
    std::vector<std::string> argv;
    std::vector<std::string> envp;
    std::optional<Stage> fault;
};

class ChildReporter {
public:
    explicit ChildReporter(int fd) : fd_(fd) {}

    void done(Stage stage, const std::string& detail) {
        writeAll(fd_, "E\t" + std::string(stageName(stage)) + "\t" + isoTimestamp() + "\t" + oneLine(detail) + "\n");
    }
    [[noreturn]] void fail(Stage stage, ErrorCode code, const std::string& why) {
        writeAll(fd_, "F\t" + std::string(stageName(stage)) + "\t" + isoTimestamp() + "\t" +
                          std::string(errorCodeName(code)) + "\t" + oneLine(why) + "\n");
        ::_exit(exitCodeFor(code));
    }
    [[noreturn]] void failWith(Stage stage, ErrorCode code, int status, const std::string& why) {
        writeAll(fd_, "F\t" + std::string(stageName(stage)) + "\t" + isoTimestamp() + "\t" +
                          std::string(errorCodeName(code)) + "\t" + oneLine(why) + "\n");
        ::_exit(status);
    }

private:
    int fd_;
};

std::string dropPrivileges(const ChildPlan& plan) {
    if (!plan.userNamespace) {
        if (::setgroups(plan.groups.size(), plan.groups.data()) != 0) {
            return std::string("setgroups: ") + std::strerror(errno);
        }
    }
    for (int cap = 0; cap <= plan.lastCap; ++cap) {
        if (::prctl(PR_CAPBSET_DROP, cap, 0, 0, 0) != 0 && errno != EINVAL) {
            return "cannot drop capability bounding set: " + std::string(std::strerror(errno));
        }
    }
    // Group first, then user: once the user id is gone the group can no longer change.
    if (::setresgid(plan.gid, plan.gid, plan.gid) != 0) {
        return std::string("setresgid: ") + std::strerror(errno);
    }
    if (::setresuid(plan.uid, plan.uid, plan.uid) != 0) {
        return std::string("setresuid: ") + std::strerror(errno);
    }
    ::prctl(PR_CAP_AMBIENT, PR_CAP_AMBIENT_CLEAR_ALL, 0, 0, 0);
    __user_cap_header_struct header{_LINUX_CAPABILITY_VERSION_3, 0};
    __user_cap_data_struct data[2] = {};
    if (::syscall(SYS_capset, &header, data) != 0) {
        return std::string("capset: ") + std::strerror(errno);
    }
    if (::prctl(PR_SET_NO_NEW_PRIVS, 1, 0, 0, 0) != 0) {
        return std::string("no_new_privs: ") + std::strerror(errno);
    }
    uid_t ruid, euid, suid;
    gid_t rgid, egid, sgid;
    ::getresuid(&ruid, &euid, &suid);
    ::getresgid(&rgid, &egid, &sgid);
    if (ruid != plan.uid || euid != plan.uid || suid != plan.uid || rgid != plan.gid || egid != plan.gid ||
        sgid != plan.gid) {
        return "credentials did not change as requested";
    }
    return {};
}

/// Runs in the forked child; never returns.
[[noreturn]] void runChild(const ChildPlan& plan, int reportFd) {
    for (int sig : forwardedSignals) {
        ::signal(sig, SIG_DFL);
    }
    sigset_t none;
    sigemptyset(&none);
    ::sigprocmask(SIG_SETMASK, &none, nullptr);
    ChildReporter report(reportFd);

    if (plan.fault == Stage::Chroot) {
        report.fail(Stage::Chroot, ErrorCode::IsolationFailed, "injected fault");
    }
    if (::chroot(plan.root.c_str()) != 0) {
        report.fail(Stage::Chroot, ErrorCode::IsolationFailed, std::string("chroot: ") + std::strerror(errno));
    }
    if (::chdir(plan.workdir.c_str()) != 0) {
        report.fail(Stage::Chroot, ErrorCode::IsolationFailed,
                    "cannot enter working directory " + plan.workdir + ": " + std::strerror(errno));
    }
    report.done(Stage::Chroot, "root=" + plan.root.string() + " workdir=" + plan.workdir);

    if (plan.fault == Stage::DropPrivileges) {
        report.fail(Stage::DropPrivileges, ErrorCode::DropFailed, "injected fault");
    }
    if (auto problem = dropPrivileges(plan); !problem.empty()) {
        report.fail(Stage::DropPrivileges, ErrorCode::DropFailed, problem);
    }
    std::string groups;
    for (auto g : plan.groups) {
        groups += (groups.empty() ? "" : ",") + std::to_string(g);
    }
    report.done(Stage::DropPrivileges,
                "uid=" + std::to_string(plan.uid) + " gid=" + std::to_string(plan.gid) + " groups=" + groups);

    if (plan.fault == Stage::ExportEnv) {
        report.fail(Stage::ExportEnv, ErrorCode::Internal, "injected fault");
    }
    std::vector<char*> envp;
    for (const auto& entry : plan.envp) {
        envp.push_back(const_cast<char*>(entry.c_str()));
    }
    envp.push_back(nullptr);
    std::vector<char*> argv;
    for (const auto& arg : plan.argv) {
        argv.push_back(const_cast<char*>(arg.c_str()));
    }
    argv.push_back(nullptr);
    report.done(Stage::ExportEnv, std::to_string(plan.envp.size()) + " variables");

    if (plan.fault == Stage::Exec) {
        report.failWith(Stage::Exec, ErrorCode::ExecNotFound, exitcode::notFound, "injected fault");
    }
    const auto& program = plan.argv.front();
    std::string executable;
    bool sawNonExecutable = false;
    auto consider = [&](const std::string& candidate) {
        struct stat st {};
        if (::stat(candidate.c_str(), &st) != 0) {
            return false;
        }
        if (S_ISREG(st.st_mode) && ::access(candidate.c_str(), X_OK) == 0) {
            executable = candidate;
            return true;
        }
        sawNonExecutable = true;
        return false;
    };
    if (program.find('/') != std::string::npos) {
        consider(program);
    } else {
        auto searchPath = lookupVariable(plan.envp, "PATH");
        if (searchPath.empty()) {
            searchPath = defaultContainerPath;
        }
        std::istringstream dirs(searchPath);
        std::string dir;
        while (std::getline(dirs, dir, ':')) {
            if (consider((dir.empty() ? "." : dir) + "/" + program)) {
                break;
            }
        }
    }
    if (executable.empty()) {
        if (sawNonExecutable) {
            report.failWith(Stage::Exec, ErrorCode::ExecNotFound, exitcode::notExecutable,
                            program + ": permission denied");
        }
        report.failWith(Stage::Exec, ErrorCode::ExecNotFound, exitcode::notFound, program + ": command not found");
    }
    report.done(Stage::Exec, executable);
    ::execve(executable.c_str(), argv.data(), envp.data());
    int err = errno;
    report.failWith(Stage::Exec, ErrorCode::ExecNotFound,
                    err == ENOENT ? exitcode::notFound : exitcode::notExecutable,
                    executable + ": " + std::strerror(err));
}

struct ChildOutcome {
    std::optional<ErrorCode> error;
    std::string message;
    int status = 0;
};

ChildOutcome superviseChild(pid_t child, int reportFd, StageTrace& trace) {
    ChildOutcome outcome;
    std::string buffer;
    char chunk[4096];
    while (true) {
        auto n = ::read(reportFd, chunk, sizeof(chunk));
        if (n < 0 && errno == EINTR) {
            continue;
        }
        if (n <= 0) {
            break;
        }
        buffer.append(chunk, static_cast<size_t>(n));
        size_t newline;
        while ((newline = buffer.find('\n')) != std::string::npos) {
            auto line = buffer.substr(0, newline);
            buffer.erase(0, newline + 1);
            std::vector<std::string> fields;
            std::istringstream in(line);
            std::string field;
            while (std::getline(in, field, '\t')) {
                fields.push_back(field);
            }
            if (fields.size() < 4) {
                continue;
            }
            auto stage = stageFromName(fields[1]);
            if (!stage) {
                continue;
            }
            if (fields[0] == "E") {
                trace.record(*stage, fields[3], fields[2]);
            } else if (fields[0] == "F" && fields.size() >= 5) {
                outcome.error = ErrorCode::Internal;
                for (int c = 0; c <= static_cast<int>(ErrorCode::Internal); ++c) {
                    if (errorCodeName(static_cast<ErrorCode>(c)) == fields[3]) {
                        outcome.error = static_cast<ErrorCode>(c);
                    }
                }
                outcome.message = fields[4];
                if (!trace.events().empty() && trace.events().back().stage == *stage) {
                    trace.markFailed(*stage, fields[4]);
                } else {
                    trace.recordFailure(*stage, fields[4], fields[2]);
                }
            }
        }
    }
    int status = 0;
    while (::waitpid(child, &status, 0) < 0) {
        if (errno != EINTR) {
            outcome.status = exitcode::internal;
            return outcome;
        }
    }
    if (WIFEXITED(status)) {
        outcome.status = WEXITSTATUS(status);
    } else if (WIFSIGNALED(status)) {
        outcome.status = 128 + WTERMSIG(status);
    }
    return outcome;
}

}

FaultInjection parseFault(const std::string& text) {
    FaultInjection fault;
    auto colon = text.find(':');
    auto stage = stageFromName(text.substr(0, colon));
    if (!stage) {
        throw Error(ErrorCode::ValidationError, "unknown stage in fault '" + text + "'");
    }
    fault.stage = stage;
    if (colon != std::string::npos) {
        auto index = text.substr(colon + 1);
        if (*stage != Stage::Mount || index.empty() || index.find_first_not_of("0123456789") != std::string::npos) {
            throw Error(ErrorCode::ValidationError, "fault index only applies as MOUNT:<entry>");
        }
        fault.mountEntry = std::stoul(index);
        fault.stage.reset();
    }
    return fault;
}

std::vector<std::string> resolveArgv(const LaunchSpec& spec, const imagefs::ImageConfig& config) {
    if (!spec.argv.empty()) {
        return spec.argv;
    }
    std::vector<std::string> argv;
    if (config.entrypoint) {
        argv = *config.entrypoint;
    }
    if (config.cmd) {
        argv.insert(argv.end(), config.cmd->begin(), config.cmd->end());
    }
    return argv;
}

Runtime::Runtime(config::SiteConfig site) : site_(std::move(site)) {}

LaunchResult Runtime::launch(const LaunchSpec& spec, const imagefs::PackedImage& image,
                             const LaunchOptions& options) {
    LaunchResult result;
    result.trace.attach(options.traceFile);
    std::unique_ptr<ContainerRoot> root;
    std::optional<Stage> failedStage;

    auto fail = [&](Stage stage, const Error& error) {
        failedStage = stage;
        result.error = error.code();
        result.message = error.what();
        result.exitStatus = exitCodeFor(error.code());
        result.trace.recordFailure(stage, std::string(errorCodeName(error.code())) + ": " + oneLine(error.what()));
    };

    ChildPlan child;
    // PREPARE
    try {
        if (options.fault.stage == Stage::Prepare) {
            throw Error(ErrorCode::MountFailed, "injected fault");
        }
        result.argv = resolveArgv(spec, image.config);
        if (result.argv.empty()) {
            throw Error(ErrorCode::ExecNotFound, "no command given and the image defines no entrypoint or cmd");
        }
        auto namespaceMode = enterMountNamespace();
        root = std::make_unique<ContainerRoot>(site_.workDir);
        if (options.fault.mountEntry == 0u) {
            throw Error(ErrorCode::MountFailed, "injected fault at mount entry 0");
        }
        root->mountImage(image);

        std::optional<gpu::GpuInjectionPlan> gpuPlan;
        std::optional<gpu::HostGpuInventory> inventory;
        try {
            inventory = gpu::probeHostInventory(site_.gpu);
        } catch (const Error& e) {
            result.warnings.push_back(std::string("gpu: inventory unavailable: ") + e.what());
        }
        auto trigger = gpu::detectTrigger(spec.hostEnv, inventory);
        if (trigger.enabled) {
            gpuPlan = gpu::planGpuInjection(*trigger.spec, *inventory);
            result.gpuEnabled = true;
        }

        std::optional<mpi::MpiInjectionPlan> mpiPlan;
        if (spec.mpi) {
            if (!site_.mpi) {
                throw Error(ErrorCode::ValidationError, "--mpi given but the site configuration has no [mpi] section");
            }
            auto host = mpi::hostMpiConfigFrom(*site_.mpi);
            auto scan = mpi::scanContainerMpi(root->root(), imageVariable(image.config, "LD_LIBRARY_PATH"));
            result.warnings.insert(result.warnings.end(), scan.warnings.begin(), scan.warnings.end());
            mpiPlan = mpi::planMpiInjection(scan, host);
            result.warnings.insert(result.warnings.end(), mpiPlan->warnings.begin(), mpiPlan->warnings.end());
        }

        result.plan = buildMountPlan(spec, image, site_, gpuPlan ? &*gpuPlan : nullptr,
                                     mpiPlan ? &*mpiPlan : nullptr);
        std::vector<EnvAdjustment> adjustments;
        if (gpuPlan) {
            adjustments.insert(adjustments.end(), gpuPlan->env.begin(), gpuPlan->env.end());
        }
        if (mpiPlan) {
            adjustments.insert(adjustments.end(), mpiPlan->env.begin(), mpiPlan->env.end());
        }
        result.env = mergeEnvironment(image.config.env, spec.hostEnv, site_, adjustments);
        result.warnings.insert(result.warnings.end(), result.env.warnings.begin(), result.env.warnings.end());

        child.root = root->root();
        child.workdir = image.config.workdir.value_or("/");
        child.uid = spec.uid;
        child.gid = spec.gid;
        child.userNamespace = namespaceMode == "user-namespace";
        child.groups = child.userNamespace ? std::vector<gid_t>{spec.gid} : supplementaryGroups(spec.uid, spec.gid);
        child.lastCap = lastCapability();
        child.argv = result.argv;
        child.envp = result.env.toEnvp();
        child.fault = options.fault.stage;

        std::ostringstream detail;
        detail << "launch=" << root->id() << " " << namespaceMode << " image=" << image.imageId.substr(0, 12)
               << (root->imageFallback() ? " (extracted, not mounted)" : "") << " entries=" << result.plan.entries.size()
               << " gpu=" << (result.gpuEnabled ? "enabled" : "disabled") << " mpi=" << (spec.mpi ? "enabled" : "disabled");
        for (auto origin : {MountOrigin::Site, MountOrigin::GpuDevice, MountOrigin::GpuLibrary, MountOrigin::GpuBinary,
                            MountOrigin::MpiFrontend, MountOrigin::MpiDependency, MountOrigin::MpiConfig,
                            MountOrigin::User}) {
            if (auto n = result.plan.count(origin)) {
                detail << " " << mountOriginName(origin) << "=" << n;
            }
        }
        result.trace.record(Stage::Prepare, detail.str());
    } catch (const Error& e) {
        fail(Stage::Prepare, e);
    } catch (const std::exception& e) {
        fail(Stage::Prepare, Error(ErrorCode::Internal, e.what()));
    }

    // MOUNT
    if (!failedStage) {
        try {
            if (options.fault.stage == Stage::Mount) {
                throw Error(ErrorCode::MountFailed, "injected fault");
            }
            for (size_t i = 1; i < result.plan.entries.size(); ++i) {
                if (options.fault.mountEntry == i) {
                    throw Error(ErrorCode::MountFailed, "injected fault at mount entry " + std::to_string(i) +
                                                            " after " + std::to_string(root->graftCount()) +
                                                            " grafts");
                }
                root->graft(result.plan.entries[i]);
            }
            root->seal();
            result.trace.record(Stage::Mount, std::to_string(root->graftCount()) + " grafts, root sealed read-only");
        } catch (const Error& e) {
            fail(Stage::Mount, e);
        } catch (const std::exception& e) {
            fail(Stage::Mount, Error(ErrorCode::MountFailed, e.what()));
        }
    }

    // CHROOT .. EXEC run in the child
    if (!failedStage) {
        int pipeFds[2];
        if (::pipe2(pipeFds, O_CLOEXEC) != 0) {
            fail(Stage::Chroot, Error(ErrorCode::IsolationFailed, std::string("pipe: ") + std::strerror(errno)));
        } else {
            SignalForwarding forwarding;
            std::fflush(nullptr);
            pid_t pid = ::fork();
            if (pid == 0) {
                ::close(pipeFds[0]);
                runChild(child, pipeFds[1]);
            }
            ::close(pipeFds[1]);
            if (pid < 0) {
                ::close(pipeFds[0]);
                fail(Stage::Chroot, Error(ErrorCode::IsolationFailed, std::string("fork: ") + std::strerror(errno)));
            } else {
                forwardTarget.store(pid);
                auto outcome = superviseChild(pid, pipeFds[0], result.trace);
                ::close(pipeFds[0]);
                result.exitStatus = outcome.status;
                if (outcome.error) {
                    result.error = outcome.error;
                    result.message = outcome.message;
                }
            }
        }
    }

    // CLEANUP
    if (!root) {
        result.trace.record(Stage::Cleanup, "nothing to release");
        return result;
    }
    auto grafts = root->graftCount();
    try {
        root->cleanup(options.fault.stage == Stage::Cleanup ? std::optional<size_t>(0) : std::nullopt);
        result.trace.record(Stage::Cleanup, "released " + std::to_string(grafts) + " grafts and the image root");
    } catch (const std::exception& e) {
        result.cleanupIncomplete = true;
        result.warnings.push_back(std::string("cleanup incomplete: ") + e.what());
        result.trace.recordFailure(Stage::Cleanup, "CLEANUP_INCOMPLETE: " + oneLine(e.what()));
        result.pendingCleanup = std::move(root);
    }
    return result;
}

}
