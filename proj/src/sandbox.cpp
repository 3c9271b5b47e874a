// SPDX-License-Identifier: Apache-2.0
#include "megaagent/sandbox.hpp"

#include <fcntl.h>
#include <linux/landlock.h>
#include <poll.h>
#include <signal.h>
#include <sys/prctl.h>
#include <sys/syscall.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>

namespace megaagent {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

constexpr __u64 kFileRights = LANDLOCK_ACCESS_FS_EXECUTE | LANDLOCK_ACCESS_FS_WRITE_FILE | LANDLOCK_ACCESS_FS_READ_FILE;
constexpr __u64 kReadRights = LANDLOCK_ACCESS_FS_EXECUTE | LANDLOCK_ACCESS_FS_READ_FILE | LANDLOCK_ACCESS_FS_READ_DIR;
constexpr __u64 kAllRights = kFileRights | LANDLOCK_ACCESS_FS_READ_DIR | LANDLOCK_ACCESS_FS_REMOVE_DIR |
                             LANDLOCK_ACCESS_FS_REMOVE_FILE | LANDLOCK_ACCESS_FS_MAKE_CHAR |
                             LANDLOCK_ACCESS_FS_MAKE_DIR | LANDLOCK_ACCESS_FS_MAKE_REG |
                             LANDLOCK_ACCESS_FS_MAKE_SOCK | LANDLOCK_ACCESS_FS_MAKE_FIFO |
                             LANDLOCK_ACCESS_FS_MAKE_BLOCK | LANDLOCK_ACCESS_FS_MAKE_SYM;

class Fd {
 public:
  Fd() = default;
  explicit Fd(int fd) : fd_(fd) {}
  ~Fd() { reset(); }
  Fd(Fd&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  Fd& operator=(Fd&& o) noexcept {
    reset();
    fd_ = std::exchange(o.fd_, -1);
    return *this;
  }
  int get() const { return fd_; }
  int release() { return std::exchange(fd_, -1); }
  void reset() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }

 private:
  int fd_ = -1;
};

bool add_path_rule(int ruleset, const fs::path& path, __u64 rights) {
  Fd target(::open(path.c_str(), O_PATH | O_CLOEXEC));
  if (target.get() < 0) return errno == ENOENT;  // absent system paths are fine
  if (!fs::is_directory(path)) rights &= kFileRights;
  struct landlock_path_beneath_attr attr {};
  attr.allowed_access = rights;
  attr.parent_fd = target.get();
  return ::syscall(SYS_landlock_add_rule, ruleset, LANDLOCK_RULE_PATH_BENEATH, &attr, 0) == 0;
}

Fd build_ruleset(const SandboxPolicy& policy, const fs::path& cwd, std::string& error) {
  struct landlock_ruleset_attr attr {};
  attr.handled_access_fs = kAllRights;
  Fd ruleset(static_cast<int>(::syscall(SYS_landlock_create_ruleset, &attr, sizeof(attr), 0)));
  if (ruleset.get() < 0) {
    error = std::string("landlock unavailable: ") + std::strerror(errno);
    return Fd{};
  }
  bool ok = add_path_rule(ruleset.get(), cwd, kAllRights);
  for (const auto& p : policy.system_read_paths) ok = ok && add_path_rule(ruleset.get(), p, kReadRights);
  ok = ok && add_path_rule(ruleset.get(), policy.interpreter_path, kReadRights);
  ok = ok && add_path_rule(ruleset.get(), "/dev/null", LANDLOCK_ACCESS_FS_READ_FILE | LANDLOCK_ACCESS_FS_WRITE_FILE);
  if (!ok) {
    error = std::string("cannot build sandbox rules: ") + std::strerror(errno);
    return Fd{};
  }
  return ruleset;
}

}  // namespace

bool landlock_available() {
  long abi = ::syscall(SYS_landlock_create_ruleset, nullptr, 0, LANDLOCK_CREATE_RULESET_VERSION);
  return abi >= 1;
}

std::unique_ptr<Process> Process::spawn(const SandboxPolicy& policy, const fs::path& cwd,
                                        const std::vector<std::string>& args, std::string& error) {
  if (args.empty()) {
    error = "empty command";
    return nullptr;
  }
  // Writing to a child that closed stdin must fail with EPIPE, not kill us.
  static const bool sigpipe_ignored = [] { return ::signal(SIGPIPE, SIG_IGN) != SIG_ERR; }();
  (void)sigpipe_ignored;

  Fd ruleset;
  if (policy.confine) {
    ruleset = build_ruleset(policy, cwd, error);
    if (ruleset.get() < 0) return nullptr;
  }

  int in_pipe[2], out_pipe[2];
  if (::pipe2(in_pipe, O_CLOEXEC) != 0) {
    error = std::strerror(errno);
    return nullptr;
  }
  if (::pipe2(out_pipe, O_CLOEXEC) != 0) {
    error = std::strerror(errno);
    ::close(in_pipe[0]);
    ::close(in_pipe[1]);
    return nullptr;
  }

  std::vector<char*> argv;
  for (const auto& a : args) argv.push_back(const_cast<char*>(a.c_str()));
  argv.push_back(nullptr);
  const std::string cwd_str = cwd.string();
  const int ruleset_fd = ruleset.get();

  pid_t pid = ::fork();
  if (pid < 0) {
    error = std::strerror(errno);
    for (int fd : {in_pipe[0], in_pipe[1], out_pipe[0], out_pipe[1]}) ::close(fd);
    return nullptr;
  }
  if (pid == 0) {
    // Child: only async-signal-safe calls from here on.
    ::setpgid(0, 0);
    ::dup2(in_pipe[0], STDIN_FILENO);
    ::dup2(out_pipe[1], STDOUT_FILENO);
    ::dup2(out_pipe[1], STDERR_FILENO);
    if (::chdir(cwd_str.c_str()) != 0) ::_exit(126);
    if (ruleset_fd >= 0) {
      if (::prctl(PR_SET_NO_NEW_PRIVS, 1, 0, 0, 0) != 0) ::_exit(126);
      if (::syscall(SYS_landlock_restrict_self, ruleset_fd, 0) != 0) ::_exit(126);
    }
    ::syscall(SYS_close_range, 3U, ~0U, 0U);
    ::execv(argv[0], argv.data());
    static const char msg[] = "sandbox: exec failed\n";
    [[maybe_unused]] auto n = ::write(STDERR_FILENO, msg, sizeof(msg) - 1);
    ::_exit(127);
  }

  ::close(in_pipe[0]);
  ::close(out_pipe[1]);
  ::setpgid(pid, pid);
  return std::unique_ptr<Process>(new Process(policy, pid, in_pipe[1], out_pipe[0]));
}

Process::Process(const SandboxPolicy& policy, int pid, int stdin_fd, int output_fd)
    : policy_(policy), pid_(pid), stdin_fd_(stdin_fd), output_fd_(output_fd), deadline_(Clock::now() + policy.timeout) {}

Process::~Process() {
  if (running_) {
    kill_group();
    int code;
    reap(true, code);
  }
  if (stdin_fd_ >= 0) ::close(stdin_fd_);
  if (output_fd_ >= 0) ::close(output_fd_);
}

void Process::kill_group() {
  ::kill(-pid_, SIGKILL);
  ::kill(pid_, SIGKILL);
}

bool Process::reap(bool block, int& exit_code) {
  int status = 0;
  pid_t r;
  do {
    r = ::waitpid(pid_, &status, block ? 0 : WNOHANG);
  } while (r < 0 && errno == EINTR);
  if (r != pid_) return false;
  running_ = false;
  exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : 128 + WTERMSIG(status);
  return true;
}

ExecResult Process::collect() {
  ExecResult result;
  if (!running_) {
    result.status = ExecStatus::Exited;
    return result;
  }
  auto last_output = Clock::now();
  bool eof = false;
  char buf[4096];
  while (true) {
    auto now = Clock::now();
    if (now >= deadline_) {
      kill_group();
      int code;
      reap(true, code);
      result.status = ExecStatus::TimedOut;
      result.exit_code = code;
      return result;
    }
    if (eof) {
      int code;
      if (reap(false, code)) {
        result.status = ExecStatus::Exited;
        result.exit_code = code;
        return result;
      }
      // stdout closed but the process lingers; keep polling its exit.
      ::usleep(5'000);
      continue;
    }
    auto idle_deadline = last_output + policy_.idle_return;
    auto wake = std::min(deadline_, idle_deadline);
    auto wait_ms = std::chrono::duration_cast<std::chrono::milliseconds>(wake - now).count();
    struct pollfd pfd {output_fd_, POLLIN, 0};
    int rc = ::poll(&pfd, 1, static_cast<int>(std::max<long long>(wait_ms, 0)));
    if (rc < 0 && errno == EINTR) continue;
    if (rc > 0) {
      ssize_t n = ::read(output_fd_, buf, sizeof(buf));
      if (n > 0) {
        if (result.output.size() < policy_.max_output_bytes)
          result.output.append(buf, static_cast<std::size_t>(std::min<ssize_t>(
                                         n, static_cast<ssize_t>(policy_.max_output_bytes - result.output.size()))));
        last_output = Clock::now();
      } else if (n == 0 || (n < 0 && errno != EINTR && errno != EAGAIN)) {
        eof = true;
      }
      continue;
    }
    if (Clock::now() >= idle_deadline && Clock::now() < deadline_) {
      int code;
      if (reap(false, code)) {
        result.status = ExecStatus::Exited;
        result.exit_code = code;
        return result;
      }
      result.status = ExecStatus::Running;
      return result;
    }
  }
}

bool Process::write_line(const std::string& line) {
  if (!running_ || stdin_fd_ < 0) return false;
  std::string data = line + "\n";
  const char* p = data.data();
  std::size_t left = data.size();
  bool ok = true;
  while (left > 0) {
    ssize_t n = ::write(stdin_fd_, p, left);
    if (n < 0) {
      if (errno == EINTR) continue;
      ok = false;
      break;
    }
    p += n;
    left -= static_cast<std::size_t>(n);
  }
  return ok;
}

ExecResult run_sandboxed(const SandboxPolicy& policy, const fs::path& cwd, const std::vector<std::string>& args) {
  std::string error;
  auto proc = Process::spawn(policy, cwd, args, error);
  if (!proc) return ExecResult{ExecStatus::FailedToStart, -1, error};
  return proc->collect();
}

}  // namespace megaagent
