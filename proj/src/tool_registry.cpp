// SPDX-License-Identifier: Apache-2.0
#include "megaagent/tool_registry.hpp"

#include <algorithm>

#include <fmt/core.h>

#include "megaagent/error.hpp"
#include "megaagent/text_util.hpp"

namespace megaagent {

using nlohmann::json;

namespace {

std::string clip(const std::string& s, std::size_t n = 500) {
  return s.size() <= n ? s : s.substr(0, n) + "...";
}

}  // namespace

std::string render_observation(const ToolObservation& o) {
  if (o.success) return o.output;
  std::string out = "Error: " + o.error_detail.value_or("failed");
  if (!o.output.empty()) out += "\n" + o.output;
  return out;
}

ToolRegistry::ToolRegistry(Runtime& runtime, Workspace& workspace, Supervisor& supervisor, SandboxPolicy policy)
    : runtime_(runtime), workspace_(workspace), supervisor_(supervisor), policy_(std::move(policy)) {}

ToolRegistry::~ToolRegistry() { release_all(); }

ToolObservation ToolRegistry::execute(const FunctionCall& call, const std::string& caller) {
  ToolObservation obs;
  try {
    obs = dispatch(call, caller);
  } catch (const std::exception& e) {
    obs = ToolObservation::fail(call.tool_name, e.what());
  }
  json args = json::object();
  for (const auto& [k, v] : call.arguments) args[k] = clip(v);
  json detail{{"tool", call.tool_name}, {"arguments", args}, {"success", obs.success}};
  if (obs.error_detail) detail["error"] = *obs.error_detail;
  detail["output"] = clip(obs.output);
  runtime_.log().append(caller, "tool_call", detail);
  return obs;
}

ToolObservation ToolRegistry::dispatch(const FunctionCall& call, const std::string& caller) {
  const ToolSchema* schema = find_schema(schemas(), call.tool_name);
  if (!schema) return ToolObservation::fail(call.tool_name, "unknown tool \"" + call.tool_name + "\"");
  for (const auto& p : schema->parameters)
    if (!call.arguments.count(p.name))
      return ToolObservation::fail(call.tool_name, "missing argument \"" + p.name + "\"");

  const auto& t = call.tool_name;
  if (t == tool_names::kExecPythonFile) return exec_python_file(caller, call.arg("filename"));
  if (t == tool_names::kInput) return input(caller, call.arg("content"));
  if (t == tool_names::kReadFile) return read_file(caller, call.arg("filename"));
  if (t == tool_names::kWriteFile) return write_file(caller, call.arg("filename"), call.arg("content"));
  if (t == tool_names::kAddAgent) return add_agent(caller, call.arg("name"), call.arg("description"));
  return terminate(caller);
}

bool ToolRegistry::extension_allowed(const std::string& filename) const {
  return std::any_of(policy_.allowed_extensions.begin(), policy_.allowed_extensions.end(),
                     [&](const std::string& ext) { return filename.ends_with(ext); });
}

ToolObservation ToolRegistry::read_file(const std::string& caller, const std::string& filename) {
  const std::string tool(tool_names::kReadFile);
  if (!is_valid_workspace_path(filename)) return ToolObservation::fail(tool, "invalid path \"" + filename + "\"");
  if (!workspace_.exists(filename)) return ToolObservation::fail(tool, "file \"" + filename + "\" does not exist");
  return ToolObservation::ok(tool, workspace_.read_as(caller, filename).content);
}

ToolObservation ToolRegistry::write_file(const std::string& caller, const std::string& filename,
                                         const std::string& content) {
  const std::string tool(tool_names::kWriteFile);
  if (!is_valid_workspace_path(filename)) return ToolObservation::fail(tool, "invalid path \"" + filename + "\"");
  if (!extension_allowed(filename))
    return ToolObservation::fail(tool, "only " + text::join(policy_.allowed_extensions, ", ") +
                                           " files may be written");
  auto result = workspace_.write_as(caller, filename, content);
  if (auto* conflict = std::get_if<ConflictReport>(&result))
    return ToolObservation::fail(tool, "conflict: " + filename + " changed since you last read it", conflict->render());
  {
    std::lock_guard lock(mutex_);
    authored_[caller].insert(filename);
  }
  return ToolObservation::ok(tool, "Wrote " + filename + " (" + std::get<CommitHash>(result).str().substr(0, 12) + ")");
}

ToolObservation ToolRegistry::render_exec(const std::string& tool, const std::string& caller, ExecResult result) {
  switch (result.status) {
    case ExecStatus::Exited:
      release(caller);
      if (result.exit_code == 0) return ToolObservation::ok(tool, result.output);
      return ToolObservation::fail(tool, fmt::format("exit code {}", result.exit_code), result.output);
    case ExecStatus::Running:
      return ToolObservation::ok(tool, result.output + (result.output.empty() || result.output.ends_with('\n') ? "" : "\n") +
                                           "[program is still running; use input to send it a line]");
    case ExecStatus::TimedOut:
      release(caller);
      return ToolObservation::fail(
          tool,
          fmt::format("SandboxTimeout: killed after {} s",
                      std::chrono::duration_cast<std::chrono::duration<double>>(policy_.timeout).count()),
          result.output);
    case ExecStatus::FailedToStart:
      release(caller);
      return ToolObservation::fail(tool, "failed to start: " + result.output);
  }
  return ToolObservation::fail(tool, "unknown execution status");
}

ToolObservation ToolRegistry::exec_python_file(const std::string& caller, const std::string& filename) {
  const std::string tool(tool_names::kExecPythonFile);
  if (!is_valid_workspace_path(filename)) return ToolObservation::fail(tool, "invalid path \"" + filename + "\"");
  auto dir = workspace_.tree_dir();
  if (!dir) return ToolObservation::fail(tool, "execution needs an on-disk workspace");
  if (!workspace_.exists(filename)) return ToolObservation::fail(tool, "file \"" + filename + "\" does not exist");

  release(caller);  // one live program per agent
  std::string error;
  auto proc = Process::spawn(policy_, *dir, {policy_.interpreter_path.string(), filename}, error);
  if (!proc) return ToolObservation::fail(tool, "failed to start: " + error);
  Process* raw = proc.get();
  {
    std::lock_guard lock(mutex_);
    live_[caller] = std::move(proc);
  }
  return render_exec(tool, caller, raw->collect());
}

ToolObservation ToolRegistry::input(const std::string& caller, const std::string& content) {
  const std::string tool(tool_names::kInput);
  Process* raw = nullptr;
  {
    std::lock_guard lock(mutex_);
    auto it = live_.find(caller);
    if (it != live_.end() && it->second->running()) raw = it->second.get();
  }
  if (!raw) return ToolObservation::fail(tool, "NoRunningProcess: no program of yours is running");
  if (!raw->write_line(content)) {
    auto result = raw->collect();
    return render_exec(tool, caller, std::move(result));
  }
  return render_exec(tool, caller, raw->collect());
}

ToolObservation ToolRegistry::add_agent(const std::string& caller, const std::string& name,
                                        const std::string& description) {
  const std::string tool(tool_names::kAddAgent);
  try {
    runtime_.spawn_agent(caller, name, description);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::SpawnRefused && e.code() != ErrorCode::NotFound) throw;
    return ToolObservation::fail(tool, e.what());
  }
  supervisor_.init_checklist(name, {"Complete the task assigned in your prompt"});
  return ToolObservation::ok(tool, "Agent " + name + " is now your subordinate. Talk to them to assign work.");
}

ToolObservation ToolRegistry::terminate(const std::string& caller) {
  const std::string tool(tool_names::kTerminate);
  if (runtime_.is_finished(caller)) return ToolObservation::ok(tool, "Already terminated.");
  if (auto list = supervisor_.checklist(caller); list && !list->complete())
    return ToolObservation::fail(tool, "IncompleteTodo: open items in " + Checklist::storage_path(caller) + ": " +
                                           text::join(list->open_items(), "; "));
  release(caller);
  runtime_.mark_finished(caller);
  return ToolObservation::ok(tool, "Conversation ended.");
}

std::map<std::string, std::set<std::string>> ToolRegistry::files_by_author() const {
  std::lock_guard lock(mutex_);
  return authored_;
}

void ToolRegistry::release(const std::string& caller) {
  std::unique_ptr<Process> victim;
  {
    std::lock_guard lock(mutex_);
    auto it = live_.find(caller);
    if (it == live_.end()) return;
    victim = std::move(it->second);
    live_.erase(it);
  }
}

void ToolRegistry::release_all() {
  std::map<std::string, std::unique_ptr<Process>> victims;
  {
    std::lock_guard lock(mutex_);
    victims.swap(live_);
  }
}

}  // namespace megaagent
