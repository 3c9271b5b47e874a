// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <condition_variable>
#include <cstdint>
#include <map>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "megaagent/memory_store.hpp"
#include "megaagent/model_gateway.hpp"
#include "megaagent/runtime.hpp"
#include "megaagent/supervisor.hpp"
#include "megaagent/tool_registry.hpp"
#include "megaagent/workspace.hpp"

namespace megaagent {

/// First-come first-served lock: waiters acquire in arrival order.
class FifoGate {
 public:
  void lock();
  void unlock();

 private:
  std::mutex mutex_;
  std::condition_variable cv_;
  std::uint64_t next_ticket_ = 0;
  std::uint64_t serving_ = 0;
};

struct RuntimeContext {
  Runtime& runtime;
  ModelGateway& gateway;
  ToolRegistry& tools;
  Workspace& workspace;
  MemoryStore& memory;
  Supervisor& supervisor;
  FifoGate* serial_gate = nullptr;  // set in serial mode
};

enum class StepKind { Completed, Terminated, FunctionLoopExceeded, ValidationFailed, Failed, Skipped };
std::string_view to_string(StepKind kind);

struct StepOutcome {
  StepKind kind = StepKind::Skipped;
  std::size_t model_calls = 0;
  std::size_t dispatched = 0;
  std::vector<Failure> failures;
  CycleTrace trace;
};

/// Conversation key for an agent's main loop.
inline constexpr std::string_view kMainConversation = "";

/// One Processing cycle: drain the queue, run the inner function-call loop,
/// verify, dispatch, remember, remediate. Leaves the agent in Idle, or in
/// Response if more messages are already waiting.
StepOutcome agent_step(const std::string& agent, RuntimeContext& ctx);

/// Steps `agent` whenever it has messages until it finishes, retires, or the
/// runtime shuts down. Idle polling never calls the model.
void run_loop(const std::string& agent, RuntimeContext& ctx);

/// One thread per agent. A finished agent's thread parks until a message
/// revives it.
class Scheduler {
 public:
  explicit Scheduler(RuntimeContext& ctx);
  ~Scheduler();
  Scheduler(const Scheduler&) = delete;
  Scheduler& operator=(const Scheduler&) = delete;

  void launch(const std::string& agent);
  /// Requests runtime shutdown and joins every thread.
  void shutdown();
  std::size_t thread_count() const;

 private:
  void unit(const std::string& agent);

  RuntimeContext& ctx_;
  mutable std::mutex mutex_;
  std::map<std::string, std::thread> threads_;
  bool stopped_ = false;
};

}  // namespace megaagent
