// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <deque>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "megaagent/agent.hpp"
#include "megaagent/model_gateway.hpp"
#include "megaagent/runtime.hpp"
#include "megaagent/sandbox.hpp"
#include "megaagent/tool_schema.hpp"
#include "megaagent/workspace.hpp"

namespace megaagent {

enum class FailureKind { IncompleteTodo, Repetition, Refusal, FormatError, ExecError };
enum class RemediationKind { RetryPrompt, RecruitReplacement, EscalateToParent };

std::string_view to_string(FailureKind kind);
std::string_view to_string(RemediationKind kind);
std::optional<FailureKind> parse_failure_kind(std::string_view text);

struct Failure {
  FailureKind kind = FailureKind::FormatError;
  std::string detail;
};

struct RemediationAction {
  RemediationKind kind = RemediationKind::RetryPrompt;
  std::size_t attempts_remaining = 0;
  std::string target;  // who received the follow-up message
};

// ---- checklists --------------------------------------------------------

struct ChecklistItem {
  std::string text;
  bool done = false;
  friend bool operator==(const ChecklistItem&, const ChecklistItem&) = default;
};

/// A per-agent TODO list stored in the workspace as todo_<owner>.txt, one
/// item per line ("1. text" or "- text"); "[done]" anywhere marks completion.
struct Checklist {
  std::string owner;
  std::vector<ChecklistItem> items;

  static std::string storage_path(std::string_view owner);
  static bool is_storage_path(std::string_view path);
  static Checklist parse(std::string owner, std::string_view content);
  std::string render() const;
  bool complete() const;
  std::vector<std::string> open_items() const;
};

// ---- per-cycle record ----------------------------------------------------

/// Everything one Processing cycle produced, as seen by the supervisor.
struct CycleTrace {
  std::vector<Message> batch;
  std::vector<std::pair<FunctionCall, ToolObservation>> calls;
  std::vector<ParseWarning> warnings;          // from every inference
  std::vector<ParseWarning> final_warnings;    // from the last inference only
  std::vector<std::string> dispatch_problems;  // malformed talk blocks
  std::vector<Dispatch> dispatches;
  std::string final_text;
  std::size_t inferences = 0;
  bool loop_exceeded = false;
  bool terminate_attempted = false;
  bool terminated = false;  // TERMINATE accepted
  std::optional<std::string> step_error;  // e.g. backend unavailable
};

struct SupervisorConfig {
  std::size_t retry_budget = 3;
  std::size_t repetition_threshold = 3;
  std::size_t window_cycles = 8;
  std::vector<std::string> refusal_patterns{"i'm sorry, but i can't", "i am sorry, but i cannot",
                                            "sorry, i can't help", "i can't assist with",
                                            "i cannot assist with", "i cannot help with"};
  /// Run produced .py files during format checks.
  bool verify_executables = false;
  std::size_t review_retries = 1;
};

/// Pure failure detection over a window of recent cycles (oldest first);
/// the last element is the cycle just completed.
std::vector<Failure> detect_failures(std::span<const CycleTrace> window, const SupervisorConfig& config,
                                     const std::optional<Checklist>& checklist);

// ---- group validation ------------------------------------------------------

enum class ReviewVerdict { Accepted, Revise, Inconclusive };
std::string_view to_string(ReviewVerdict verdict);

struct Deficiency {
  std::string agent;
  std::string text;
  friend bool operator==(const Deficiency&, const Deficiency&) = default;
};

struct ParsedReview {
  ReviewVerdict verdict = ReviewVerdict::Inconclusive;
  std::vector<Deficiency> deficiencies;
};

/// "ACCEPT" or "REVISE:" followed by "<Agent>: <deficiency>" lines, where
/// only names in `members` count. Anything else is Inconclusive.
ParsedReview parse_review(std::string_view text, const std::set<std::string>& members);

struct ValidationOutcome {
  ReviewVerdict verdict = ReviewVerdict::Inconclusive;
  std::vector<Deficiency> deficiencies;
  std::size_t rounds = 0;
  bool escalated = false;
};

/// What a group member contributed, shown to the reviewing admin.
struct MemberOutput {
  std::string agent;
  std::vector<std::string> files;
  std::string checklist;
};

class Supervisor {
 public:
  Supervisor(Runtime& runtime, Workspace& workspace, ModelGateway& gateway, SupervisorConfig config = {},
             SandboxPolicy sandbox = {});

  const SupervisorConfig& config() const { return config_; }

  // Checklists live in the workspace and are written with optimistic retry.
  std::optional<Checklist> checklist(const std::string& owner) const;
  void init_checklist(const std::string& owner, const std::vector<std::string>& items);
  void add_checklist_item(const std::string& owner, const std::string& item);
  void copy_checklist(const std::string& from, const std::string& to);

  /// Checks one cycle's output. Logs exactly one `verify` event.
  std::optional<Failure> verify_format(const std::string& agent, const CycleTrace& trace);
  /// Appends the cycle to the agent's window and runs detect_failures.
  std::vector<Failure> observe_cycle(const std::string& agent, const CycleTrace& trace);
  /// Acts on a failure: retry prompt, replacement, or escalation.
  RemediationAction remediate(const std::string& agent, const Failure& failure, const CycleTrace* trace = nullptr);
  /// Nudges an agent that went idle without finishing; counts against its
  /// IncompleteTodo budget like any other retry.
  RemediationAction nudge_idle(const std::string& agent);

  /// Asks `admin` to review its group's results against `requirements`.
  ValidationOutcome validate_result(const std::string& admin, const std::vector<MemberOutput>& outputs,
                                    const std::string& requirements, const std::set<std::string>& members);

  /// Set once a failure reached the Boss with nowhere to escalate.
  std::optional<std::string> root_escalation() const;

  std::size_t attempts_used(const std::string& agent, FailureKind kind) const;

  static std::string header(FailureKind kind) { return "SUPERVISOR:" + std::string(to_string(kind)); }

 private:
  void send(const std::string& recipient, const std::string& text);
  void escalate_root(const std::string& why);

  Runtime& runtime_;
  Workspace& workspace_;
  ModelGateway& gateway_;
  SupervisorConfig config_;
  SandboxPolicy sandbox_;

  mutable std::mutex mutex_;
  std::map<std::string, std::deque<CycleTrace>> windows_;
  std::map<std::pair<std::string, FailureKind>, std::size_t> attempts_;
  std::optional<std::string> root_escalation_;
  std::mutex checklist_mutex_;
};

}  // namespace megaagent
