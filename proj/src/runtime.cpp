// SPDX-License-Identifier: Apache-2.0
#include "megaagent/runtime.hpp"

#include <algorithm>
#include <set>

#include "megaagent/error.hpp"
#include "megaagent/text_util.hpp"

namespace megaagent {

using nlohmann::json;

std::size_t Hierarchy::depth() const {
  std::size_t d = 0;
  for (const auto& [_, l] : level) d = std::max(d, l);
  return d;
}

std::vector<std::size_t> Hierarchy::level_sizes() const {
  std::vector<std::size_t> sizes(level.empty() ? 0 : depth() + 1, 0);
  for (const auto& [_, l] : level) ++sizes[l];
  return sizes;
}

bool Hierarchy::is_tree() const {
  if (root.empty() || !level.count(root) || parent.count(root)) return false;
  std::set<std::string> seen{root};
  std::vector<std::string> stack{root};
  while (!stack.empty()) {
    auto n = stack.back();
    stack.pop_back();
    auto it = children.find(n);
    if (it == children.end()) continue;
    for (const auto& c : it->second) {
      auto p = parent.find(c);
      if (p == parent.end() || p->second != n) return false;
      if (!seen.insert(c).second) return false;
      stack.push_back(c);
    }
  }
  return seen.size() == level.size();
}

std::vector<std::string> Hierarchy::descendants(const std::string& name) const {
  std::vector<std::string> out;
  std::vector<std::string> stack{name};
  while (!stack.empty()) {
    auto n = stack.back();
    stack.pop_back();
    auto it = children.find(n);
    if (it == children.end()) continue;
    for (auto c = it->second.rbegin(); c != it->second.rend(); ++c) {
      out.push_back(*c);
      stack.push_back(*c);
    }
  }
  return out;
}

Runtime::Runtime(RuntimeConfig config, EventLog& log) : config_(std::move(config)), log_(log) {}

Runtime::~Runtime() { request_shutdown(); }

Runtime::Slot& Runtime::slot_locked(const std::string& name) {
  auto it = slots_.find(name);
  if (it == slots_.end()) throw Error(ErrorCode::NotFound, "agent " + name);
  return it->second;
}

const Runtime::Slot& Runtime::slot_locked(const std::string& name) const {
  auto it = slots_.find(name);
  if (it == slots_.end()) throw Error(ErrorCode::NotFound, "agent " + name);
  return it->second;
}

void Runtime::bump_locked() {
  ++activity_;
  activity_cv_.notify_all();
}

void Runtime::notify_spawn(const std::string& name) {
  std::function<void(const std::string&)> listener;
  {
    std::lock_guard lock(listener_mutex_);
    listener = spawn_listener_;
  }
  if (listener) listener(name);
}

void Runtime::set_spawn_listener(std::function<void(const std::string&)> listener) {
  std::lock_guard lock(listener_mutex_);
  spawn_listener_ = std::move(listener);
}

Agent Runtime::add_boss(const std::string& name, const std::string& system_prompt) {
  Agent copy;
  {
    std::lock_guard lock(mutex_);
    if (boss_) throw Error(ErrorCode::InvariantViolation, "runtime already has a Boss");
    if (!text::is_valid_agent_name(name) || name == kSupervisorSender)
      throw Error(ErrorCode::SpawnRefused, "invalid agent name \"" + name + "\"");
    Slot s;
    s.agent.name = name;
    s.agent.role = AgentRole::Boss;
    s.agent.group_id = name;
    s.agent.system_prompt = system_prompt;
    s.queue = std::make_unique<MessageQueue>(name, sequence_);
    copy = s.agent;
    slots_.emplace(name, std::move(s));
    order_.push_back(name);
    boss_ = name;
    log_.append(name, "spawn", json{{"parent", nullptr}, {"role", "Boss"}, {"level", 0}, {"group", name}});
    bump_locked();
  }
  return copy;
}

void Runtime::refuse(const std::string& parent, const std::string& name, const std::string& reason) {
  log_.append(parent, "spawn_refused", json{{"name", name}, {"reason", reason}});
  throw Error(ErrorCode::SpawnRefused, reason);
}

Agent Runtime::spawn_agent(const std::string& parent, const std::string& name, const std::string& system_prompt) {
  Agent copy;
  {
    std::lock_guard lock(mutex_);
    Slot& p = slot_locked(parent);
    if (!text::is_valid_agent_name(name) || name == kSupervisorSender)
      refuse(parent, name, "invalid agent name \"" + name + "\"");
    if (slots_.count(name)) refuse(parent, name, "agent \"" + name + "\" already exists");
    if (slots_.size() >= config_.max_agents)
      refuse(parent, name, "agent limit of " + std::to_string(config_.max_agents) + " reached");
    if (p.agent.level + 1 > config_.max_hierarchy_depth)
      refuse(parent, name, "hierarchy depth limit of " + std::to_string(config_.max_hierarchy_depth) + " reached");
    if (p.agent.retired) refuse(parent, name, "parent \"" + parent + "\" has been replaced");

    Slot s;
    s.agent.name = name;
    s.agent.parent = parent;
    s.agent.system_prompt = system_prompt;
    s.agent.level = p.agent.level + 1;
    if (p.agent.role == AgentRole::Boss) {
      s.agent.role = AgentRole::Admin;
      s.agent.group_id = name;
    } else {
      if (p.agent.role == AgentRole::Ordinary) {
        p.agent.role = AgentRole::Admin;
        p.agent.group_id = parent;
        log_.append(parent, "promote", json{{"group", parent}});
      }
      s.agent.role = AgentRole::Ordinary;
      s.agent.group_id = p.agent.group_id;
    }
    s.queue = std::make_unique<MessageQueue>(name, sequence_);
    copy = s.agent;
    log_.append(name, "spawn",
                json{{"parent", parent},
                     {"role", to_string(copy.role)},
                     {"level", copy.level},
                     {"group", copy.group_id}});
    slots_.emplace(name, std::move(s));
    order_.push_back(name);
    bump_locked();
  }
  notify_spawn(name);
  return copy;
}

Agent Runtime::replace_agent(const std::string& name) {
  Agent copy;
  {
    std::lock_guard lock(mutex_);
    Slot& old = slot_locked(name);
    if (old.agent.role == AgentRole::Boss) throw Error(ErrorCode::EscalationAtRoot, "the Boss cannot be replaced");
    if (old.agent.retired) throw Error(ErrorCode::InvariantViolation, name + " is already retired");
    if (slots_.size() >= config_.max_agents)
      refuse(*old.agent.parent, name, "agent limit reached while replacing " + name);
    std::string base = name;
    std::string fresh;
    for (std::size_t k = 1;; ++k) {
      fresh = base + "_r" + std::to_string(k);
      if (!slots_.count(fresh)) break;
    }
    Slot s;
    s.agent = old.agent;
    s.agent.name = fresh;
    s.agent.state = AgentState::Idle;
    s.agent.call_counter = 0;
    s.agent.finished = false;
    s.agent.finish_epoch = 0;
    s.agent.replaced_by.reset();
    if (s.agent.role == AgentRole::Admin && s.agent.group_id == name) s.agent.group_id = fresh;
    s.queue = std::make_unique<MessageQueue>(fresh, sequence_);

    // Children follow the replacement; so does the group they belong to.
    for (auto& [_, other] : slots_) {
      if (other.agent.parent == name) other.agent.parent = fresh;
      if (other.agent.group_id == name) other.agent.group_id = s.agent.group_id;
    }
    old.agent.retired = true;
    old.agent.finished = true;
    old.agent.replaced_by = fresh;
    copy = s.agent;
    log_.append(fresh, "spawn",
                json{{"parent", *copy.parent},
                     {"role", to_string(copy.role)},
                     {"level", copy.level},
                     {"group", copy.group_id},
                     {"replaces", name}});
    log_.append(name, "retire", json{{"replaced_by", fresh}});

    auto pending = old.queue->dequeue_batch();
    if (!pending.empty()) {
      json seqs = json::array();
      for (const auto& m : pending) seqs.push_back(m.sequence);
      log_.append(name, "batch", json{{"seqs", seqs}, {"forwarded_to", fresh}});
    }
    auto& fresh_slot = slots_.emplace(fresh, std::move(s)).first->second;
    order_.push_back(fresh);
    for (auto& m : pending) {
      m.recipient = fresh;
      std::string sender = m.sender;
      auto seq = fresh_slot.queue->enqueue(std::move(m));
      log_.append(sender, "enqueue", json{{"recipient", fresh}, {"seq", seq}});
    }
    bump_locked();
  }
  {
    std::lock_guard lock(mutex_);
    slot_locked(name).queue->notify();
  }
  notify_spawn(copy.name);
  return copy;
}

std::optional<Agent> Runtime::find(const std::string& name) const {
  std::lock_guard lock(mutex_);
  auto it = slots_.find(name);
  if (it == slots_.end()) return std::nullopt;
  return it->second.agent;
}

Agent Runtime::get(const std::string& name) const {
  std::lock_guard lock(mutex_);
  return slot_locked(name).agent;
}

std::vector<Agent> Runtime::agents() const {
  std::lock_guard lock(mutex_);
  std::vector<Agent> out;
  out.reserve(order_.size());
  for (const auto& n : order_) out.push_back(slots_.at(n).agent);
  return out;
}

std::optional<std::string> Runtime::boss() const {
  std::lock_guard lock(mutex_);
  return boss_;
}

std::size_t Runtime::agent_count() const {
  std::lock_guard lock(mutex_);
  return slots_.size();
}

Hierarchy Runtime::hierarchy() const {
  std::lock_guard lock(mutex_);
  Hierarchy h;
  if (boss_) h.root = *boss_;
  for (const auto& n : order_) {
    const auto& a = slots_.at(n).agent;
    h.level[n] = a.level;
    h.children[n];
    if (a.parent) {
      h.parent[n] = *a.parent;
      h.children[*a.parent].push_back(n);
    }
  }
  return h;
}

std::string Runtime::resolve_locked(const std::string& name) const {
  std::string cur = name;
  for (std::size_t hops = 0; hops <= slots_.size(); ++hops) {
    auto it = slots_.find(cur);
    if (it == slots_.end() || !it->second.agent.replaced_by) return cur;
    cur = *it->second.agent.replaced_by;
  }
  throw Error(ErrorCode::InvariantViolation, "replacement cycle at " + name);
}

std::string Runtime::resolve(const std::string& name) const {
  std::lock_guard lock(mutex_);
  return resolve_locked(name);
}

bool Runtime::can_route_locked(const std::string& sender, const std::string& recipient) const {
  auto r_it = slots_.find(recipient);
  if (r_it == slots_.end()) return false;
  if (sender == kSupervisorSender) return true;
  auto s_it = slots_.find(sender);
  if (s_it == slots_.end() || sender == recipient) return false;
  const Agent& s = s_it->second.agent;
  const Agent& r = r_it->second.agent;
  switch (s.role) {
    case AgentRole::Boss: return r.role == AgentRole::Admin;
    case AgentRole::Admin: return r.role == AgentRole::Admin || r.group_id == s.group_id || s.parent == r.name;
    case AgentRole::Ordinary: return r.group_id == s.group_id || s.parent == r.name;
  }
  return false;
}

bool Runtime::can_route(const std::string& sender, const std::string& recipient) const {
  std::lock_guard lock(mutex_);
  auto target = resolve_locked(recipient);
  auto from = resolve_locked(sender);
  return can_route_locked(sender == kSupervisorSender ? sender : from, target);
}

std::uint64_t Runtime::enqueue(const std::string& sender, const std::string& recipient, const std::string& text) {
  std::lock_guard lock(mutex_);
  if (!slots_.count(recipient)) throw Error(ErrorCode::UnknownRecipient, "no agent named \"" + recipient + "\"");
  std::string target = resolve_locked(recipient);
  std::string from = sender == kSupervisorSender ? sender : resolve_locked(sender);
  if (!can_route_locked(from, target))
    throw Error(ErrorCode::RoutingForbidden, sender + " may not message " + recipient);
  Slot& s = slot_locked(target);
  if (s.agent.finished) {
    s.agent.finished = false;
    log_.append(target, "revive", json{{"by", sender}});
  }
  // Batches are logged under the same lock, so this record precedes the batch.
  auto seq = s.queue->enqueue(Message{sender, target, text, 0});
  log_.append(sender, "enqueue", json{{"recipient", target}, {"seq", seq}});
  bump_locked();
  return seq;
}

std::vector<Message> Runtime::dequeue_batch(const std::string& name) {
  {
    std::lock_guard lock(mutex_);
    auto batch = slot_locked(name).queue->dequeue_batch();
    if (!batch.empty()) {
      json seqs = json::array();
      for (const auto& m : batch) seqs.push_back(m.sequence);
      log_.append(name, "batch", json{{"seqs", seqs}});
    }
    return batch;
  }
}

std::size_t Runtime::queue_size(const std::string& name) const {
  std::lock_guard lock(mutex_);
  return slot_locked(name).queue->size();
}

AgentState Runtime::state(const std::string& name) const {
  std::lock_guard lock(mutex_);
  return slot_locked(name).agent.state;
}

void Runtime::transition(const std::string& name, AgentState to) {
  std::lock_guard lock(mutex_);
  Agent& a = slot_locked(name).agent;
  if (!is_legal_transition(a.state, to))
    throw Error(ErrorCode::InvariantViolation, "illegal transition " + std::string(to_string(a.state)) + "->" +
                                                   std::string(to_string(to)) + " for " + name);
  log_.append(name, "transition", json{{"from", to_string(a.state)}, {"to", to_string(to)}});
  if (to == AgentState::Processing) ++a.call_counter;
  a.state = to;
  bump_locked();
}

void Runtime::mark_finished(const std::string& name) {
  std::lock_guard lock(mutex_);
  Agent& a = slot_locked(name).agent;
  if (a.finished) return;
  a.finished = true;
  ++a.finish_epoch;
  log_.append(name, "finish", json{{"epoch", a.finish_epoch}});
  bump_locked();
}

bool Runtime::is_finished(const std::string& name) const {
  std::lock_guard lock(mutex_);
  return slot_locked(name).agent.finished;
}

void Runtime::revive_if_pending(const std::string& name) {
  std::lock_guard lock(mutex_);
  Slot& s = slot_locked(name);
  if (s.agent.finished && !s.agent.retired && !s.queue->empty()) {
    s.agent.finished = false;
    log_.append(name, "revive", json{{"by", "pending"}});
    bump_locked();
  }
}

bool Runtime::all_quiet() const {
  std::lock_guard lock(mutex_);
  for (const auto& [_, s] : slots_)
    if (s.agent.state != AgentState::Idle || !s.queue->empty()) return false;
  return true;
}

std::uint64_t Runtime::finish_generation() const {
  std::lock_guard lock(mutex_);
  std::uint64_t g = 0;
  for (const auto& [_, s] : slots_) g += s.agent.finish_epoch;
  return g;
}

bool Runtime::wait_for_work(const std::string& name, std::chrono::milliseconds timeout) {
  MessageQueue* q;
  {
    std::lock_guard lock(mutex_);
    q = slot_locked(name).queue.get();
  }
  return q->wait_nonempty_for(timeout, shutdown_);
}

void Runtime::wait_for_revival(const std::string& name) {
  MessageQueue* q;
  {
    std::lock_guard lock(mutex_);
    q = slot_locked(name).queue.get();
  }
  while (!shutdown_.load()) {
    q->wait_nonempty_for(config_.poll_interval, shutdown_);
    std::lock_guard lock(mutex_);
    const auto& a = slot_locked(name).agent;
    if (!a.retired && !a.finished) return;
  }
}

void Runtime::request_shutdown() {
  shutdown_.store(true);
  std::lock_guard lock(mutex_);
  for (auto& [_, s] : slots_) s.queue->notify();
  bump_locked();
}

std::uint64_t Runtime::activity() const {
  std::lock_guard lock(mutex_);
  return activity_;
}

void Runtime::wait_activity(std::uint64_t seen, std::chrono::milliseconds timeout) {
  std::unique_lock lock(mutex_);
  activity_cv_.wait_for(lock, timeout, [&] { return activity_ != seen || shutdown_.load(); });
}

}  // namespace megaagent
