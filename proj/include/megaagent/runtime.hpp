// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "megaagent/agent.hpp"
#include "megaagent/event_log.hpp"
#include "megaagent/memory_store.hpp"

namespace megaagent {

struct RuntimeConfig {
  std::chrono::milliseconds poll_interval{50};
  std::size_t max_function_call_iterations = 10;
  std::size_t max_agents = 1024;
  std::size_t max_hierarchy_depth = 6;
  bool serial = false;
  double temperature = 0.0;
  RetrievalConfig retrieval;
};

/// Sender name used for messages injected by the supervisor. Always routable.
inline constexpr std::string_view kSupervisorSender = "supervisor";

struct Hierarchy {
  std::string root;
  std::map<std::string, std::vector<std::string>> children;  // in spawn order
  std::map<std::string, std::string> parent;
  std::map<std::string, std::size_t> level;

  std::size_t size() const { return level.size(); }
  std::size_t depth() const;  // levels below the root
  std::vector<std::size_t> level_sizes() const;
  /// Every non-root node has exactly one parent, reachable from the root.
  bool is_tree() const;
  std::vector<std::string> descendants(const std::string& name) const;
};

/// Agent registry, message routing and the per-agent state machine. Thread
/// safe; agent records are handed out by value.
class Runtime {
 public:
  Runtime(RuntimeConfig config, EventLog& log);
  ~Runtime();

  const RuntimeConfig& config() const { return config_; }
  EventLog& log() { return log_; }

  /// Registers the root agent. Exactly one Boss per runtime.
  Agent add_boss(const std::string& name, const std::string& system_prompt);

  /// Creates `name` under `parent`. A child of the Boss becomes an Admin
  /// heading its own group; a child of anyone else joins the parent's group,
  /// and an Ordinary parent is promoted to Admin of a new group first.
  /// Throws SpawnRefused on duplicate/invalid names, the agent cap or the
  /// depth cap, NotFound for an unknown parent.
  Agent spawn_agent(const std::string& parent, const std::string& name, const std::string& system_prompt);

  /// Clones a retired-to-be agent under the same parent with the same prompt,
  /// moves its children and pending messages over, and retires the original.
  Agent replace_agent(const std::string& name);

  /// Called (outside the registry lock) after every spawn or replacement.
  void set_spawn_listener(std::function<void(const std::string&)> listener);

  std::optional<Agent> find(const std::string& name) const;
  Agent get(const std::string& name) const;  // throws NotFound
  std::vector<Agent> agents() const;         // in spawn order
  std::optional<std::string> boss() const;
  std::size_t agent_count() const;
  Hierarchy hierarchy() const;
  /// Follows replacement links to the live successor of `name`.
  std::string resolve(const std::string& name) const;

  bool can_route(const std::string& sender, const std::string& recipient) const;
  /// Routes `text` to `recipient` (after resolving replacements). Throws
  /// UnknownRecipient or RoutingForbidden. Revives a finished recipient.
  std::uint64_t enqueue(const std::string& sender, const std::string& recipient, const std::string& text);
  std::vector<Message> dequeue_batch(const std::string& name);
  std::size_t queue_size(const std::string& name) const;

  AgentState state(const std::string& name) const;
  /// Moves `name` along a legal edge and logs it; InvariantViolation otherwise.
  void transition(const std::string& name, AgentState to);

  void mark_finished(const std::string& name);
  bool is_finished(const std::string& name) const;
  /// Clears `finished` when messages arrived after the agent finished.
  void revive_if_pending(const std::string& name);

  /// Everything is Idle and every queue is empty, observed atomically.
  bool all_quiet() const;
  /// Sum of all finish epochs; changes whenever any agent finishes.
  std::uint64_t finish_generation() const;

  /// Waits for a message for `name`, or until timeout/shutdown.
  bool wait_for_work(const std::string& name, std::chrono::milliseconds timeout);
  /// Parks a finished agent until a message revives it or shutdown starts.
  void wait_for_revival(const std::string& name);

  void request_shutdown();
  bool shutting_down() const { return shutdown_.load(); }

  /// Monotone counter bumped on registry activity; for the monitor thread.
  std::uint64_t activity() const;
  void wait_activity(std::uint64_t seen, std::chrono::milliseconds timeout);

 private:
  struct Slot {
    Agent agent;
    std::unique_ptr<MessageQueue> queue;
  };
  Slot& slot_locked(const std::string& name);
  const Slot& slot_locked(const std::string& name) const;
  std::string resolve_locked(const std::string& name) const;
  bool can_route_locked(const std::string& sender, const std::string& recipient) const;
  void refuse(const std::string& parent, const std::string& name, const std::string& reason);
  void bump_locked();
  void notify_spawn(const std::string& name);

  RuntimeConfig config_;
  EventLog& log_;
  SequenceSource sequence_;
  std::atomic<bool> shutdown_{false};

  mutable std::mutex mutex_;
  std::condition_variable activity_cv_;
  std::uint64_t activity_ = 0;
  std::map<std::string, Slot> slots_;
  std::vector<std::string> order_;
  std::optional<std::string> boss_;
  std::function<void(const std::string&)> spawn_listener_;
  std::mutex listener_mutex_;
};

}  // namespace megaagent
