// SPDX-License-Identifier: Apache-2.0
#include "megaagent/agent.hpp"

#include <regex>

#include "megaagent/text_util.hpp"

namespace megaagent {

std::string_view to_string(AgentRole role) {
  switch (role) {
    case AgentRole::Boss: return "Boss";
    case AgentRole::Admin: return "Admin";
    case AgentRole::Ordinary: return "Ordinary";
  }
  return "Ordinary";
}

std::string_view to_string(AgentState state) {
  switch (state) {
    case AgentState::Idle: return "Idle";
    case AgentState::Processing: return "Processing";
    case AgentState::Response: return "Response";
  }
  return "Idle";
}

std::optional<AgentState> parse_agent_state(std::string_view text) {
  for (auto s : {AgentState::Idle, AgentState::Processing, AgentState::Response})
    if (to_string(s) == text) return s;
  return std::nullopt;
}

bool is_legal_transition(AgentState from, AgentState to) {
  switch (from) {
    case AgentState::Idle: return to == AgentState::Processing;
    case AgentState::Processing: return to == AgentState::Response;
    case AgentState::Response: return to == AgentState::Processing || to == AgentState::Idle;
  }
  return false;
}

MessageQueue::MessageQueue(std::string owner, SequenceSource& sequence) : owner_(std::move(owner)), sequence_(sequence) {}

std::uint64_t MessageQueue::enqueue(Message message) {
  std::uint64_t seq;
  {
    std::lock_guard lock(mutex_);
    seq = sequence_.next();
    message.sequence = seq;
    entries_.push_back(std::move(message));
  }
  cv_.notify_all();
  return seq;
}

std::vector<Message> MessageQueue::dequeue_batch() {
  std::lock_guard lock(mutex_);
  std::vector<Message> batch(std::make_move_iterator(entries_.begin()), std::make_move_iterator(entries_.end()));
  entries_.clear();
  return batch;
}

std::size_t MessageQueue::size() const {
  std::lock_guard lock(mutex_);
  return entries_.size();
}

bool MessageQueue::wait_nonempty_for(std::chrono::milliseconds timeout, const std::atomic<bool>& stop) {
  std::unique_lock lock(mutex_);
  return cv_.wait_for(lock, timeout, [&] { return !entries_.empty() || stop.load(); }) && !entries_.empty();
}

void MessageQueue::wait_nonempty(const std::atomic<bool>& stop) {
  std::unique_lock lock(mutex_);
  cv_.wait(lock, [&] { return !entries_.empty() || stop.load(); });
}

void MessageQueue::notify() {
  // Taking the lock orders the notify after any waiter's predicate check.
  { std::lock_guard lock(mutex_); }
  cv_.notify_all();
}

std::vector<Dispatch> parse_dispatches(std::string_view response_text, std::vector<std::string>* problems) {
  static const std::regex open_tag(R"re(<talk\s+to\s*=\s*"([^"]*)"\s*>)re");
  static constexpr std::string_view close_tag = "</talk>";
  std::vector<Dispatch> out;
  std::string text(response_text);
  auto begin = text.cbegin();
  std::smatch m;
  while (std::regex_search(begin, text.cend(), m, open_tag)) {
    std::string name = std::string(text::trim(m[1].str()));
    auto body_start = m[0].second;
    auto offset = static_cast<std::size_t>(body_start - text.cbegin());
    auto close = text.find(close_tag, offset);
    if (close == std::string::npos) {
      if (problems) problems->push_back("unterminated <talk> block to \"" + name + "\"");
      break;
    }
    std::string body(text::trim(std::string_view(text).substr(offset, close - offset)));
    if (name.empty()) {
      if (problems) problems->push_back("<talk> block without a recipient");
    } else {
      out.push_back({std::move(name), std::move(body)});
    }
    begin = text.cbegin() + static_cast<std::ptrdiff_t>(close + close_tag.size());
  }
  return out;
}

std::string format_dispatch(const Dispatch& dispatch) {
  return "<talk to=\"" + dispatch.recipient + "\">" + dispatch.text + "</talk>";
}

}  // namespace megaagent
