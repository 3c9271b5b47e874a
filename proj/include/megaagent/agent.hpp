// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace megaagent {

enum class AgentRole { Boss, Admin, Ordinary };
enum class AgentState { Idle, Processing, Response };

std::string_view to_string(AgentRole role);
std::string_view to_string(AgentState state);
std::optional<AgentState> parse_agent_state(std::string_view text);

/// The four legal edges: Idle->Processing, Processing->Response,
/// Response->Processing, Response->Idle.
bool is_legal_transition(AgentState from, AgentState to);

struct Agent {
  std::string name;
  AgentRole role = AgentRole::Ordinary;
  std::optional<std::string> parent;
  std::string group_id;
  std::string system_prompt;
  AgentState state = AgentState::Idle;
  std::size_t call_counter = 0;  // Processing entries so far
  std::size_t level = 0;         // depth below the Boss
  bool finished = false;         // TERMINATEd with a complete checklist
  bool retired = false;          // replaced; never scheduled again
  std::optional<std::string> replaced_by;
  std::uint64_t finish_epoch = 0;  // bumps on every finish
};

struct Message {
  std::string sender;
  std::string recipient;
  std::string text;
  std::uint64_t sequence = 0;
};

/// Source of globally increasing message sequence numbers.
class SequenceSource {
 public:
  std::uint64_t next() { return next_.fetch_add(1, std::memory_order_relaxed); }

 private:
  std::atomic<std::uint64_t> next_{0};
};

/// Multi-producer, single-consumer FIFO owned by one agent. Any thread may
/// enqueue; only the owner drains it. Sequence numbers are drawn inside the
/// queue lock, so they increase in enqueue order.
class MessageQueue {
 public:
  MessageQueue(std::string owner, SequenceSource& sequence);

  const std::string& owner() const { return owner_; }

  /// Stamps `message.sequence`, appends it, and wakes a waiting owner.
  std::uint64_t enqueue(Message message);
  /// Removes and returns everything queued right now, oldest first.
  std::vector<Message> dequeue_batch();
  std::size_t size() const;
  bool empty() const { return size() == 0; }

  /// Blocks until the queue is non-empty, `stop` is set, or `timeout` passes.
  bool wait_nonempty_for(std::chrono::milliseconds timeout, const std::atomic<bool>& stop);
  /// Blocks until the queue is non-empty or `stop` is set.
  void wait_nonempty(const std::atomic<bool>& stop);
  void notify();

 private:
  std::string owner_;
  SequenceSource& sequence_;
  mutable std::mutex mutex_;
  std::condition_variable cv_;
  std::deque<Message> entries_;
};

/// A message addressed to another agent inside a response:
///   <talk to="Name">text</talk>
struct Dispatch {
  std::string recipient;
  std::string text;
  friend bool operator==(const Dispatch&, const Dispatch&) = default;
};

/// Extracts talk blocks in source order. Unterminated or nameless blocks are
/// reported through `problems` and skipped.
std::vector<Dispatch> parse_dispatches(std::string_view response_text, std::vector<std::string>* problems = nullptr);
std::string format_dispatch(const Dispatch& dispatch);

}  // namespace megaagent
