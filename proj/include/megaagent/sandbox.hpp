// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

namespace megaagent {

struct SandboxPolicy {
  /// Wall-clock budget for a process, counted from spawn across every
  /// collect() call. Exceeding it kills the process group.
  std::chrono::milliseconds timeout{30'000};
  /// A live process that stays silent this long is handed back as Running so
  /// the caller can feed it input.
  std::chrono::milliseconds idle_return{2'000};
  std::filesystem::path interpreter_path = "/usr/bin/python3";
  std::vector<std::string> allowed_extensions{".txt", ".py"};
  /// Read-only (and executable) locations the interpreter needs.
  std::vector<std::filesystem::path> system_read_paths{"/usr", "/bin", "/lib", "/lib64", "/etc"};
  std::size_t max_output_bytes = 64 * 1024;
  /// Confine the child with Landlock so it can only write inside the working
  /// directory and only read there and under system_read_paths.
  bool confine = true;
};

enum class ExecStatus { Exited, Running, TimedOut, FailedToStart };

struct ExecResult {
  ExecStatus status = ExecStatus::FailedToStart;
  int exit_code = -1;  // meaningful when Exited; 128+signal for signalled exits
  std::string output;  // merged stdout and stderr collected by this call
};

/// True when the kernel supports Landlock filesystem confinement.
bool landlock_available();

/// A sandboxed child process with piped stdin and merged stdout/stderr.
/// Destroying a live Process kills its process group.
class Process {
 public:
  static std::unique_ptr<Process> spawn(const SandboxPolicy& policy, const std::filesystem::path& cwd,
                                        const std::vector<std::string>& args, std::string& error);
  ~Process();
  Process(const Process&) = delete;
  Process& operator=(const Process&) = delete;

  /// Reads output until the process exits, goes idle, or exhausts its budget.
  ExecResult collect();
  bool write_line(const std::string& line);
  bool running() const { return running_; }
  int pid() const { return pid_; }

 private:
  Process(const SandboxPolicy& policy, int pid, int stdin_fd, int output_fd);
  void kill_group();
  bool reap(bool block, int& exit_code);

  SandboxPolicy policy_;
  int pid_ = -1;
  int stdin_fd_ = -1;
  int output_fd_ = -1;
  bool running_ = true;
  std::chrono::steady_clock::time_point deadline_;
};

/// Runs `args` to completion (or idle/timeout), for one-shot checks.
ExecResult run_sandboxed(const SandboxPolicy& policy, const std::filesystem::path& cwd,
                         const std::vector<std::string>& args);

}  // namespace megaagent
