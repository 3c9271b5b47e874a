// SPDX-License-Identifier: Apache-2.0
#include "megaagent/agent_loop.hpp"

#include <algorithm>

#include "megaagent/error.hpp"
#include "megaagent/text_util.hpp"

namespace megaagent {

using nlohmann::json;

void FifoGate::lock() {
  std::unique_lock lock(mutex_);
  const auto ticket = next_ticket_++;
  cv_.wait(lock, [&] { return serving_ == ticket; });
}

void FifoGate::unlock() {
  {
    std::lock_guard lock(mutex_);
    ++serving_;
  }
  cv_.notify_all();
}

std::string_view to_string(StepKind kind) {
  switch (kind) {
    case StepKind::Completed: return "Completed";
    case StepKind::Terminated: return "Terminated";
    case StepKind::FunctionLoopExceeded: return "FunctionLoopExceeded";
    case StepKind::ValidationFailed: return "ValidationFailed";
    case StepKind::Failed: return "Failed";
    case StepKind::Skipped: return "Skipped";
  }
  return "Skipped";
}

namespace {

void remember(MemoryStore& memory, const std::string& agent, const std::string& text) {
  if (text::trim(text).empty()) return;
  memory.append(agent, text.size() > 4000 ? text.substr(0, 4000) : text);
}

void run_inner_loop(const std::string& name, const Agent& self, RuntimeContext& ctx, StepOutcome& out) {
  auto& rt = ctx.runtime;
  CycleTrace& trace = out.trace;

  ChatRequest req;
  req.agent_name = name;
  req.conversation = std::string(kMainConversation);
  req.system_prompt = self.system_prompt;
  req.tool_schemas = ctx.tools.schemas();
  req.temperature = rt.config().temperature;
  const std::string query = trace.batch.empty() ? std::string() : trace.batch.back().text;
  for (const auto& m : ctx.memory.retrieve(name, query, rt.config().retrieval))
    req.context_messages.push_back({"memory", m.text});
  for (const auto& m : trace.batch) req.context_messages.push_back({m.sender, m.text});

  ModelResponse resp = ctx.gateway.complete(req);
  trace.inferences = 1;
  trace.warnings = resp.warnings;
  while (resp.parsed_calls.size() > 0) {
    if (trace.inferences >= rt.config().max_function_call_iterations) {
      trace.loop_exceeded = true;
      break;
    }
    req.context_messages.push_back({name, resp.text});
    bool stop = false;
    for (const auto& call : resp.parsed_calls) {
      auto obs = ctx.tools.execute(call, name);
      if (call.tool_name == tool_names::kTerminate) {
        trace.terminate_attempted = true;
        trace.terminated = trace.terminated || obs.success;
        stop = true;
      }
      req.context_messages.push_back({"tool:" + call.tool_name, render_observation(obs)});
      trace.calls.emplace_back(call, std::move(obs));
    }
    for (const auto& w : resp.warnings)
      req.context_messages.push_back({std::string(kSupervisorSender), "Ignored malformed call: " + w.reason});
    if (stop) break;
    resp = ctx.gateway.complete(req);
    ++trace.inferences;
    trace.warnings.insert(trace.warnings.end(), resp.warnings.begin(), resp.warnings.end());
  }
  trace.final_text = resp.text;
  trace.final_warnings = resp.warnings;
}

}  // namespace

StepOutcome agent_step(const std::string& name, RuntimeContext& ctx) {
  auto& rt = ctx.runtime;
  StepOutcome out;
  const Agent self = rt.get(name);
  if (self.retired) return out;
  if (self.state == AgentState::Idle && rt.queue_size(name) == 0) return out;

  rt.transition(name, AgentState::Processing);
  CycleTrace& trace = out.trace;
  trace.batch = rt.dequeue_batch(name);

  try {
    run_inner_loop(name, self, ctx, out);
  } catch (const std::exception& e) {
    trace.step_error = e.what();
  }
  out.model_calls = trace.inferences;

  if (!trace.loop_exceeded && !trace.step_error)
    trace.dispatches = parse_dispatches(trace.final_text, &trace.dispatch_problems);

  auto verdict = ctx.supervisor.verify_format(name, trace);
  if (!verdict && !trace.loop_exceeded && !trace.step_error) {
    for (const auto& d : trace.dispatches) {
      try {
        auto seq = rt.enqueue(name, d.recipient, d.text);
        rt.log().append(name, "dispatch", json{{"recipient", rt.resolve(d.recipient)}, {"seq", seq}});
        ++out.dispatched;
      } catch (const Error& e) {
        // The recipient vanished or was re-grouped after verification.
        rt.log().append(name, "dispatch_failed", json{{"recipient", d.recipient}, {"error", e.what()}});
      }
    }
  }

  try {
    for (const auto& m : trace.batch) remember(ctx.memory, name, m.sender + ": " + m.text);
    for (const auto& [call, obs] : trace.calls)
      remember(ctx.memory, name, call.tool_name + " -> " + render_observation(obs));
    remember(ctx.memory, name, trace.final_text);
  } catch (const std::exception& e) {
    rt.log().append(name, "memory_error", json{{"error", e.what()}});
  }

  if (verdict) out.failures.push_back(*verdict);
  for (auto& f : ctx.supervisor.observe_cycle(name, trace)) {
    bool seen = std::any_of(out.failures.begin(), out.failures.end(), [&](const auto& g) { return g.kind == f.kind; });
    if (!seen) out.failures.push_back(std::move(f));
  }
  // A replacement makes every other remediation moot.
  auto refusal = std::find_if(out.failures.begin(), out.failures.end(),
                              [](const auto& f) { return f.kind == FailureKind::Refusal; });
  if (refusal != out.failures.end()) {
    ctx.supervisor.remediate(name, *refusal, &trace);
  } else {
    for (const auto& f : out.failures) ctx.supervisor.remediate(name, f, &trace);
  }

  if (trace.step_error)
    out.kind = StepKind::Failed;
  else if (trace.loop_exceeded)
    out.kind = StepKind::FunctionLoopExceeded;
  else if (verdict)
    out.kind = StepKind::ValidationFailed;
  else if (trace.terminated)
    out.kind = StepKind::Terminated;
  else
    out.kind = StepKind::Completed;

  rt.transition(name, AgentState::Response);
  rt.revive_if_pending(name);
  const Agent after = rt.get(name);
  if (after.retired || rt.queue_size(name) == 0) rt.transition(name, AgentState::Idle);
  return out;
}

namespace {

// Returns false if the agent's unit hit an unrecoverable runtime error.
bool run_loop_impl(const std::string& name, RuntimeContext& ctx) {
  auto& rt = ctx.runtime;
  while (!rt.shutting_down()) {
    auto self = rt.find(name);
    if (!self || self->retired) return true;
    if (self->finished && rt.queue_size(name) == 0) return true;
    if (self->state == AgentState::Idle && rt.queue_size(name) == 0) {
      rt.wait_for_work(name, rt.config().poll_interval);
      continue;
    }
    try {
      if (ctx.serial_gate) {
        std::lock_guard gate(*ctx.serial_gate);
        agent_step(name, ctx);
      } else {
        agent_step(name, ctx);
      }
    } catch (const std::exception& e) {
      rt.log().append(name, "unit_error", json{{"error", e.what()}});
      return false;
    }
  }
  return true;
}

}  // namespace

void run_loop(const std::string& name, RuntimeContext& ctx) { run_loop_impl(name, ctx); }

Scheduler::Scheduler(RuntimeContext& ctx) : ctx_(ctx) {}

Scheduler::~Scheduler() { shutdown(); }

void Scheduler::launch(const std::string& agent) {
  std::lock_guard lock(mutex_);
  if (stopped_ || threads_.count(agent)) return;
  threads_.emplace(agent, std::thread(&Scheduler::unit, this, agent));
}

void Scheduler::unit(const std::string& agent) {
  auto& rt = ctx_.runtime;
  while (!rt.shutting_down()) {
    if (!run_loop_impl(agent, ctx_)) return;
    if (rt.shutting_down()) return;
    auto self = rt.find(agent);
    if (!self || self->retired) return;
    rt.wait_for_revival(agent);
  }
}

void Scheduler::shutdown() {
  std::map<std::string, std::thread> threads;
  {
    std::lock_guard lock(mutex_);
    if (stopped_) return;
    stopped_ = true;
    threads.swap(threads_);
  }
  ctx_.runtime.request_shutdown();
  for (auto& [_, t] : threads)
    if (t.joinable()) t.join();
}

std::size_t Scheduler::thread_count() const {
  std::lock_guard lock(mutex_);
  return threads_.size();
}

}  // namespace megaagent
