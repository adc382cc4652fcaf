#include "hpcrun/common/Process.hpp"

#include <cstdlib>
#include <filesystem>

#include <fcntl.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

extern char** environ;

namespace hpcrun::process {

int runQuiet(const std::vector<std::string>& argv) {
    if (argv.empty()) {
        return -1;
    }
    std::vector<char*> args;
    for (const auto& arg : argv) {
        args.push_back(const_cast<char*>(arg.c_str()));
    }
    args.push_back(nullptr);

    posix_spawn_file_actions_t actions;
    posix_spawn_file_actions_init(&actions);
    posix_spawn_file_actions_addopen(&actions, STDOUT_FILENO, "/dev/null", O_WRONLY, 0);
    posix_spawn_file_actions_addopen(&actions, STDERR_FILENO, "/dev/null", O_WRONLY, 0);
    pid_t pid = 0;
    int rc = posix_spawnp(&pid, args[0], &actions, nullptr, args.data(), environ);
    posix_spawn_file_actions_destroy(&actions);
    if (rc != 0) {
        return -1;
    }
    int status = 0;
    while (::waitpid(pid, &status, 0) < 0) {
        if (errno != EINTR) {
            return -1;
        }
    }
    if (WIFEXITED(status)) {
        return WEXITSTATUS(status);
    }
    return 128 + WTERMSIG(status);
}

std::optional<std::string> findOnPath(const std::string& program) {
    const char* pathEnv = std::getenv("PATH");
    std::string paths = pathEnv ? pathEnv : "/usr/local/bin:/usr/bin:/bin:/usr/sbin:/sbin";
    size_t pos = 0;
    while (pos <= paths.size()) {
        auto next = paths.find(':', pos);
        if (next == std::string::npos) {
            next = paths.size();
        }
        auto dir = paths.substr(pos, next - pos);
        if (!dir.empty()) {
            auto candidate = std::filesystem::path(dir) / program;
            if (::access(candidate.c_str(), X_OK) == 0) {
                return candidate.string();
            }
        }
        pos = next + 1;
    }
    return std::nullopt;
}

}
