// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <filesystem>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "megaagent/agent_loop.hpp"
#include "megaagent/event_log.hpp"
#include "megaagent/memory_store.hpp"
#include "megaagent/metrics.hpp"
#include "megaagent/model_gateway.hpp"
#include "megaagent/runtime.hpp"
#include "megaagent/sandbox.hpp"
#include "megaagent/supervisor.hpp"
#include "megaagent/tool_registry.hpp"
#include "megaagent/workspace.hpp"

namespace megaagent {

struct AgentSpec {
  std::string name;
  std::string prompt_body;
  bool is_beginner = false;
};

struct TagIssue {
  std::size_t offset = 0;  // byte offset of the offending tag
  std::string reason;
};

struct EmployeeSpecs {
  std::vector<AgentSpec> specs;
  std::optional<std::string> beginner;
  std::vector<TagIssue> issues;  // MalformedTag reports; those blocks are skipped
};

/// Extracts <employee name="X">...</employee> blocks and the
/// <beginner>X</beginner> tag. A beginner that names no parsed spec is dropped.
EmployeeSpecs parse_employee_specs(std::string_view text);

struct OrchestratorConfig {
  std::string boss_name = "Boss";
  std::chrono::milliseconds deadlock_timeout{30'000};
  std::vector<std::string> initial_checklist{"Complete the task assigned in your prompt"};
  /// Aggregate with a Boss model call. Unset: only for nondeterministic backends.
  std::optional<bool> model_summary;
};

struct RunConfig {
  RuntimeConfig runtime;
  SupervisorConfig supervisor;
  SandboxPolicy sandbox;
  OrchestratorConfig orchestrator;
  std::optional<std::filesystem::path> workspace_dir;  // in-memory when absent
  std::optional<std::filesystem::path> log_path;       // event log JSONL
};

enum class RunStatus { Complete, Partial };
std::string_view to_string(RunStatus status);

struct DeliverableFile {
  std::string path;
  CommitHash hash;
};

struct Deliverable {
  std::vector<DeliverableFile> files;  // sorted by path, checklists excluded
  std::string summary;
  StageReport report;
  RunStatus status = RunStatus::Complete;
  std::string diagnostic;  // why a partial run stopped
  nlohmann::json to_json() const;
};

/// Owns one run: event log, ledger, gateway, workspace, memory, runtime,
/// supervisor, tools and scheduler.
class Orchestrator {
 public:
  Orchestrator(ModelBackend& backend, RunConfig config);
  ~Orchestrator();
  Orchestrator(const Orchestrator&) = delete;
  Orchestrator& operator=(const Orchestrator&) = delete;

  /// Creates the Boss, asks it for a decomposition, spawns one Admin per
  /// employee block and sends the kickoff. Throws EmptyDecomposition.
  Hierarchy bootstrap(const std::string& meta_prompt);
  /// bootstrap, run every agent to quiescence, validate, aggregate.
  Deliverable run(const std::string& meta_prompt);
  Deliverable aggregate();

  /// True when the Boss answered the decomposition request with TERMINATE.
  bool terminated_at_bootstrap() const { return boss_terminated_; }

  const RunConfig& config() const { return config_; }
  EventLog& log() { return *log_; }
  UsageLedger& ledger() { return *ledger_; }
  ModelGateway& gateway() { return *gateway_; }
  Workspace& workspace() { return *workspace_; }
  MemoryStore& memory() { return *memory_; }
  Runtime& runtime() { return *runtime_; }
  Supervisor& supervisor() { return *supervisor_; }
  ToolRegistry& tools() { return *tools_; }

 private:
  struct Abort {
    std::string reason;
  };
  void open_stage(StageLabel stage);
  void close_stage(StageLabel stage);
  void monitor();
  bool validate_ready_groups();
  bool group_ready(const std::string& admin, const Hierarchy& h) const;
  std::map<std::string, std::uint64_t> epochs_of(const std::vector<std::string>& members) const;
  std::vector<std::string> live_members(const std::string& admin, const Hierarchy& h) const;
  std::vector<MemberOutput> outputs_for(const std::vector<std::string>& members) const;
  bool all_groups_accepted(const Hierarchy& h) const;
  bool everyone_finished() const;
  Deliverable finish(RunStatus status, std::string diagnostic);

  RunConfig config_;
  std::string meta_prompt_;
  std::unique_ptr<EventLog> log_;
  std::unique_ptr<UsageLedger> ledger_;
  std::unique_ptr<ModelGateway> gateway_;
  std::unique_ptr<Workspace> workspace_;
  std::unique_ptr<MemoryStore> memory_;
  std::unique_ptr<Runtime> runtime_;
  std::unique_ptr<Supervisor> supervisor_;
  std::unique_ptr<ToolRegistry> tools_;
  FifoGate serial_gate_;
  std::unique_ptr<RuntimeContext> context_;
  std::unique_ptr<Scheduler> scheduler_;

  bool boss_terminated_ = false;
  std::uint64_t acceptances_ = 0;
  // Acceptance and escalation are remembered against the finish epochs of
  // the group at review time; any later finish invalidates them.
  std::map<std::string, std::map<std::string, std::uint64_t>> accepted_;
  std::map<std::string, std::map<std::string, std::uint64_t>> escalated_;
  std::optional<std::map<std::string, std::uint64_t>> boss_accepted_;
  std::optional<std::map<std::string, std::uint64_t>> boss_escalated_;
};

}  // namespace megaagent
