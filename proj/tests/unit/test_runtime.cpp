// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <random>
#include <set>
#include <thread>

#include "megaagent/agent_loop.hpp"
#include "megaagent/error.hpp"
#include "scenarios.hpp"

using namespace megaagent;
using namespace megaagent::testing;

namespace {

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an Error");
  return ErrorCode::InvariantViolation;
}

std::vector<std::string> texts(const std::vector<Message>& batch) {
  std::vector<std::string> out;
  for (const auto& m : batch) out.push_back(m.text);
  return out;
}

}  // namespace

TEST_CASE("only the four documented edges are legal") {
  const std::set<std::pair<AgentState, AgentState>> legal{{AgentState::Idle, AgentState::Processing},
                                                          {AgentState::Processing, AgentState::Response},
                                                          {AgentState::Response, AgentState::Processing},
                                                          {AgentState::Response, AgentState::Idle}};
  for (auto from : {AgentState::Idle, AgentState::Processing, AgentState::Response})
    for (auto to : {AgentState::Idle, AgentState::Processing, AgentState::Response})
      CHECK(is_legal_transition(from, to) == legal.count({from, to}) > 0);
}

TEST_CASE("random transition sequences keep the counter equal to Processing entries") {
  std::mt19937 rng(3);
  EventLog log;
  Runtime rt({}, log);
  rt.add_boss("Boss", "");
  const AgentState all[] = {AgentState::Idle, AgentState::Processing, AgentState::Response};
  std::size_t entries = 0;
  for (int i = 0; i < 500; ++i) {
    auto from = rt.state("Boss");
    auto to = all[rng() % 3];
    if (is_legal_transition(from, to)) {
      rt.transition("Boss", to);
      if (to == AgentState::Processing) ++entries;
    } else {
      CHECK(code_of([&] { rt.transition("Boss", to); }) == ErrorCode::InvariantViolation);
      CHECK(rt.state("Boss") == from);
    }
  }
  CHECK(rt.get("Boss").call_counter == entries);
}

TEST_CASE("messages arrive in FIFO order and a batch takes everything queued") {
  Rig rig({});
  rig.team({"A", "B"});
  rig.runtime.enqueue("A", "B", "m1");
  rig.runtime.enqueue("A", "B", "m2");
  rig.runtime.enqueue("Boss", "B", "m3");
  CHECK(rig.runtime.queue_size("B") == 3);
  auto batch = rig.runtime.dequeue_batch("B");
  CHECK(texts(batch) == std::vector<std::string>{"m1", "m2", "m3"});
  CHECK(batch[0].sequence < batch[1].sequence);
  CHECK(batch[1].sequence < batch[2].sequence);
  CHECK(rig.runtime.dequeue_batch("B").empty());
}

TEST_CASE("routing follows the hierarchy") {
  Rig rig({});
  rig.team({"A1", "A2"});
  rig.runtime.spawn_agent("A1", "W1", "");
  rig.runtime.spawn_agent("A1", "W2", "");
  rig.runtime.spawn_agent("A2", "V1", "");
  auto& rt = rig.runtime;

  CHECK(rt.can_route("Boss", "A1"));
  CHECK_FALSE(rt.can_route("Boss", "W1"));
  CHECK(rt.can_route("A1", "A2"));
  CHECK(rt.can_route("A1", "W1"));
  CHECK(rt.can_route("W1", "W2"));
  CHECK(rt.can_route("W1", "A1"));
  CHECK_FALSE(rt.can_route("A1", "V1"));
  CHECK_FALSE(rt.can_route("W1", "V1"));
  CHECK_FALSE(rt.can_route("W1", "A2"));
  CHECK_FALSE(rt.can_route("A1", "A1"));
  CHECK(rt.can_route(std::string(kSupervisorSender), "V1"));

  CHECK(code_of([&] { rt.enqueue("W1", "V1", "hello"); }) == ErrorCode::RoutingForbidden);
  CHECK(code_of([&] { rt.enqueue("W1", "Nobody", "hello"); }) == ErrorCode::UnknownRecipient);
  CHECK(rt.queue_size("V1") == 0);
  rt.enqueue("A1", "A2", "sync");
  CHECK(rt.queue_size("A2") == 1);
}

TEST_CASE("messages sent during Processing wait for the next batch") {
  Rig rig({});
  rig.team({"A", "B"});
  auto& rt = rig.runtime;
  rt.enqueue("A", "B", "first");
  rt.transition("B", AgentState::Processing);
  CHECK(texts(rt.dequeue_batch("B")) == std::vector<std::string>{"first"});
  rt.enqueue("A", "B", "second");
  rt.enqueue("A", "B", "third");
  rt.transition("B", AgentState::Response);
  rt.transition("B", AgentState::Processing);
  CHECK(texts(rt.dequeue_batch("B")) == std::vector<std::string>{"second", "third"});
}

TEST_CASE("concurrent producers: every message delivered once, per-producer order kept") {
  Rig rig({});
  rig.team({"Hub", "P1", "P2", "P3", "P4"});
  auto& rt = rig.runtime;
  constexpr int kPerProducer = 200;
  std::vector<std::thread> producers;
  for (int p = 1; p <= 4; ++p)
    producers.emplace_back([&, p] {
      for (int i = 0; i < kPerProducer; ++i) rt.enqueue("P" + std::to_string(p), "Hub", std::to_string(i));
    });
  std::vector<Message> received;
  while (received.size() < 4 * kPerProducer) {
    auto batch = rt.dequeue_batch("Hub");
    received.insert(received.end(), batch.begin(), batch.end());
    if (batch.empty()) std::this_thread::yield();
  }
  for (auto& t : producers) t.join();
  CHECK(rt.dequeue_batch("Hub").empty());
  std::map<std::string, int> next;
  std::set<std::uint64_t> seqs;
  std::uint64_t last = 0;
  for (std::size_t i = 0; i < received.size(); ++i) {
    const auto& m = received[i];
    CHECK(std::stoi(m.text) == next[m.sender]++);
    CHECK(seqs.insert(m.sequence).second);
    if (i) CHECK(m.sequence > last);
    last = m.sequence;
  }
  for (int p = 1; p <= 4; ++p) CHECK(next["P" + std::to_string(p)] == kPerProducer);
}

TEST_CASE("spawning assigns roles, groups and levels") {
  Rig rig({});
  rig.team({"A"});
  auto& rt = rig.runtime;
  auto a = rt.get("A");
  CHECK(a.role == AgentRole::Admin);
  CHECK(a.level == 1);
  CHECK(a.group_id == "A");
  auto w = rt.spawn_agent("A", "W", "");
  CHECK(w.role == AgentRole::Ordinary);
  CHECK(w.group_id == "A");
  CHECK(w.level == 2);

  auto x = rt.spawn_agent("W", "X", "");
  CHECK(rt.get("W").role == AgentRole::Admin);
  CHECK(rt.get("W").group_id == "W");
  CHECK(x.group_id == "W");
  CHECK(x.level == 3);

  auto h = rt.hierarchy();
  CHECK(h.is_tree());
  CHECK(h.depth() == 3);
  CHECK(h.level_sizes() == std::vector<std::size_t>{1, 1, 1, 1});
  CHECK(h.descendants("A") == std::vector<std::string>{"W", "X"});
}

TEST_CASE("spawn refusals") {
  RuntimeConfig cfg;
  cfg.max_hierarchy_depth = 2;
  cfg.max_agents = 4;
  Rig rig({}, cfg);
  rig.team({"A"});
  auto& rt = rig.runtime;
  rt.spawn_agent("A", "W", "");
  CHECK(code_of([&] { rt.spawn_agent("W", "Deep", ""); }) == ErrorCode::SpawnRefused);
  CHECK(code_of([&] { rt.spawn_agent("A", "W", ""); }) == ErrorCode::SpawnRefused);
  CHECK(code_of([&] { rt.spawn_agent("A", "bad name", ""); }) == ErrorCode::SpawnRefused);
  CHECK(code_of([&] { rt.spawn_agent("A", std::string(kSupervisorSender), ""); }) == ErrorCode::SpawnRefused);
  rt.spawn_agent("A", "V", "");
  CHECK(code_of([&] { rt.spawn_agent("A", "Fifth", ""); }) == ErrorCode::SpawnRefused);
  CHECK(rig.events("spawn_refused") == 5);
  CHECK(rt.agent_count() == 4);
}

TEST_CASE("a replacement inherits position, pending messages and the old name") {
  Rig rig({});
  rig.team({"A"});
  auto& rt = rig.runtime;
  rt.spawn_agent("A", "W", "");
  rt.spawn_agent("A", "V", "");
  rt.enqueue("V", "W", "pending");
  auto fresh = rt.replace_agent("W");
  CHECK(fresh.name == "W_r1");
  CHECK(fresh.group_id == "A");
  CHECK(fresh.parent == "A");
  CHECK(rt.get("W").retired);
  CHECK(rt.resolve("W") == "W_r1");
  CHECK(texts(rt.dequeue_batch("W_r1")) == std::vector<std::string>{"pending"});
  rt.enqueue("V", "W", "after");
  CHECK(rt.queue_size("W_r1") == 1);
  CHECK(rt.queue_size("W") == 0);
  CHECK(rt.replace_agent("W_r1").name == "W_r1_r1");
  CHECK(code_of([&] { rt.replace_agent("Boss"); }) == ErrorCode::EscalationAtRoot);
}

TEST_CASE("a message revives a finished agent") {
  Rig rig({});
  rig.team({"A", "B"});
  auto& rt = rig.runtime;
  rt.mark_finished("B");
  CHECK(rt.is_finished("B"));
  auto gen = rt.finish_generation();
  rt.enqueue("A", "B", "more work");
  CHECK_FALSE(rt.is_finished("B"));
  CHECK(rig.events("revive") == 1);
  rt.mark_finished("B");
  CHECK(rt.finish_generation() == gen + 1);
}

TEST_CASE("agent_step: one message, one reply") {
  ScriptedScenario s;
  s.add("B", 0, "Got it.\n" + talk("A", "done"));
  Rig rig(s);
  rig.team({"A", "B"});
  rig.runtime.enqueue("A", "B", "please");
  auto out = agent_step("B", rig.ctx);
  CHECK(out.kind == StepKind::Completed);
  CHECK(out.model_calls == 1);
  CHECK(out.dispatched == 1);
  CHECK(rig.runtime.queue_size("A") == 1);
  CHECK(rig.runtime.state("B") == AgentState::Idle);
  CHECK(rig.runtime.get("B").call_counter == 1);
}

TEST_CASE("agent_step: a call then plain text takes two inferences") {
  ScriptedScenario s;
  s.add("B", 0, call("write_file", {{"filename", "a.txt"}, {"content", "x"}}));
  s.add("B", 1, "Written.");
  Rig rig(s);
  rig.team({"A", "B"});
  rig.runtime.enqueue("A", "B", "write a");
  auto out = agent_step("B", rig.ctx);
  CHECK(out.model_calls == 2);
  CHECK(out.dispatched == 0);
  REQUIRE(out.trace.calls.size() == 1);
  CHECK(out.trace.calls[0].second.success);
  CHECK(rig.workspace->read("a.txt").content == "x");
  CHECK(rig.runtime.get("B").call_counter == 1);
}

TEST_CASE("agent_step: a model that always calls stops at the iteration bound") {
  ScriptedScenario s;
  s.default_response = call("read_file", {{"filename", "nothing.txt"}}) + talk("A", "never sent");
  Rig rig(s);
  rig.team({"A", "B"});
  rig.runtime.enqueue("A", "B", "go");
  auto out = agent_step("B", rig.ctx);
  CHECK(out.kind == StepKind::FunctionLoopExceeded);
  CHECK(out.model_calls == 10);
  CHECK(out.dispatched == 0);
  CHECK(rig.runtime.queue_size("A") == 0);
}

TEST_CASE("agent_step with an empty queue does nothing") {
  Rig rig({});
  rig.team({"A"});
  auto out = agent_step("A", rig.ctx);
  CHECK(out.kind == StepKind::Skipped);
  CHECK(out.model_calls == 0);
  CHECK(rig.backend.calls_for("A") == 0);
}

TEST_CASE("run_loop on an idle agent makes no model calls") {
  RuntimeConfig cfg;
  cfg.poll_interval = std::chrono::milliseconds(5);
  Rig rig({}, cfg);
  rig.team({"A"});
  std::thread unit([&] { run_loop("A", rig.ctx); });
  std::this_thread::sleep_for(std::chrono::milliseconds(100));
  rig.runtime.request_shutdown();
  unit.join();
  CHECK(rig.backend.calls_for("A") == 0);
  CHECK(rig.events("transition") == 0);
}

TEST_CASE("run_loop processes work and stops once the agent finishes") {
  ScriptedScenario s;
  s.add("A", 0, call("TERMINATE"));
  Rig rig(s);
  rig.team({"A"});
  rig.runtime.enqueue("Boss", "A", "do it");
  run_loop("A", rig.ctx);
  CHECK(rig.runtime.is_finished("A"));
  CHECK(rig.runtime.state("A") == AgentState::Idle);
  CHECK(rig.backend.calls_for("A") == 1);
}

TEST_CASE("talk blocks parse in order and malformed ones are reported") {
  std::vector<std::string> problems;
  auto got = parse_dispatches("x <talk to=\"A\">one</talk> y <talk to=\"B\">two\nlines</talk>", &problems);
  CHECK(got == std::vector<Dispatch>{{"A", "one"}, {"B", "two\nlines"}});
  CHECK(problems.empty());
  parse_dispatches("<talk to=\"A\">never closed", &problems);
  CHECK(problems.size() == 1);
  CHECK(parse_dispatches(format_dispatch({"Zed", "hi"})) == std::vector<Dispatch>{{"Zed", "hi"}});
}
