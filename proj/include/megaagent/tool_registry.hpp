// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <string>
#include <vector>

#include "megaagent/runtime.hpp"
#include "megaagent/sandbox.hpp"
#include "megaagent/supervisor.hpp"
#include "megaagent/tool_schema.hpp"
#include "megaagent/workspace.hpp"

namespace megaagent {

/// Executes the six agent tools. Every call is logged as a `tool_call`
/// event; failures come back as observations, never as exceptions.
class ToolRegistry {
 public:
  ToolRegistry(Runtime& runtime, Workspace& workspace, Supervisor& supervisor, SandboxPolicy policy = {});
  ~ToolRegistry();

  const std::vector<ToolSchema>& schemas() const { return registry_schemas(); }
  const SandboxPolicy& policy() const { return policy_; }

  ToolObservation execute(const FunctionCall& call, const std::string& caller);

  /// Paths each agent has committed, for review summaries.
  std::map<std::string, std::set<std::string>> files_by_author() const;
  /// Kills the caller's live program, if any.
  void release(const std::string& caller);
  void release_all();

 private:
  ToolObservation dispatch(const FunctionCall& call, const std::string& caller);
  ToolObservation exec_python_file(const std::string& caller, const std::string& filename);
  ToolObservation input(const std::string& caller, const std::string& content);
  ToolObservation read_file(const std::string& caller, const std::string& filename);
  ToolObservation write_file(const std::string& caller, const std::string& filename, const std::string& content);
  ToolObservation add_agent(const std::string& caller, const std::string& name, const std::string& description);
  ToolObservation terminate(const std::string& caller);
  ToolObservation render_exec(const std::string& tool, const std::string& caller, ExecResult result);
  bool extension_allowed(const std::string& filename) const;

  Runtime& runtime_;
  Workspace& workspace_;
  Supervisor& supervisor_;
  SandboxPolicy policy_;

  mutable std::mutex mutex_;
  std::map<std::string, std::unique_ptr<Process>> live_;
  std::map<std::string, std::set<std::string>> authored_;
};

/// Renders an observation the way it is shown back to the model.
std::string render_observation(const ToolObservation& observation);

}  // namespace megaagent
