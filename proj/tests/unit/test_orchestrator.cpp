// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <random>

#include "megaagent/config.hpp"
#include "megaagent/log_analysis.hpp"
#include "oracles.hpp"
#include "scenarios.hpp"

using namespace megaagent;
using namespace megaagent::testing;

namespace {

std::vector<std::string> names_of(const EmployeeSpecs& s) {
  std::vector<std::string> out;
  for (const auto& spec : s.specs) out.push_back(spec.name);
  return out;
}

std::size_t count(const std::vector<EventRecord>& events, std::string_view name) {
  return std::count_if(events.begin(), events.end(), [&](const EventRecord& e) { return e.event == name; });
}

}  // namespace

TEST_CASE("employee blocks and the beginner tag") {
  auto text = "Here is the team.\n" + employee("Alice", "You are Alice, the designer.") +
              employee("Bob", "You are Bob.\nYou list features.") + "<beginner>Bob</beginner>";
  auto parsed = parse_employee_specs(text);
  CHECK(names_of(parsed) == std::vector<std::string>{"Alice", "Bob"});
  CHECK(parsed.specs[0].prompt_body == "You are Alice, the designer.");
  CHECK(parsed.specs[1].prompt_body == "You are Bob.\nYou list features.");
  CHECK(parsed.beginner == "Bob");
  CHECK(parsed.specs[1].is_beginner);
  CHECK_FALSE(parsed.specs[0].is_beginner);
  CHECK(parsed.issues.empty());

  CHECK(parse_employee_specs("").specs.empty());
  CHECK_FALSE(parse_employee_specs(employee("A", "x") + "<beginner>Ghost</beginner>").beginner.has_value());
}

TEST_CASE("five good blocks and one unbalanced") {
  std::string text;
  for (auto n : {"R1", "R2", "R3"}) text += employee(n, std::string("role ") + n);
  text += "<employee name=\"Broken\">never closed\n";
  for (auto n : {"R4", "R5"}) text += employee(n, std::string("role ") + n);
  auto parsed = parse_employee_specs(text);
  auto ref = reference_employee_tags(text);
  CHECK(names_of(parsed) == ref.names);
  CHECK(names_of(parsed) == std::vector<std::string>{"R1", "R2", "R3", "R4", "R5"});
  CHECK(parsed.issues.size() == ref.unbalanced);
  CHECK(parsed.issues.size() == 1);
}

TEST_CASE("employee parsing agrees with the reference matcher on random documents") {
  std::mt19937 rng(23);
  const std::vector<std::string> pieces = {employee("Ann", "designs"), employee("Ben", "codes\nall day"),
                                           "<employee name=\"Cut\">dangling\n", "</employee>\n", "prose line\n",
                                           employee("Dee", "tests")};
  for (int trial = 0; trial < 300; ++trial) {
    std::string text;
    for (int i = 0, n = static_cast<int>(rng() % 6); i < n; ++i) text += pieces[rng() % pieces.size()];
    auto parsed = parse_employee_specs(text);
    auto ref = reference_employee_tags(text);
    CHECK(names_of(parsed) == ref.names);
    CHECK(parsed.issues.size() == ref.unbalanced);
  }
}

TEST_CASE("bootstrap spawns one admin per role and kicks off the beginner") {
  ScriptedScenario s;
  std::string decomposition;
  for (auto n : {"Bob", "Alice", "Carol", "David", "Eve"}) decomposition += employee(n, std::string("You are ") + n);
  s.add("Boss", 0, decomposition + "<beginner>Bob</beginner>");
  ScriptedBackend backend(s);
  auto cfg = scripted_profile();
  Orchestrator orch(backend, cfg);
  auto h = orch.bootstrap("Build a game.");
  CHECK(h.size() == 6);
  CHECK(h.children["Boss"] == std::vector<std::string>{"Bob", "Alice", "Carol", "David", "Eve"});
  for (auto n : {"Bob", "Alice", "Carol", "David", "Eve"}) {
    CHECK(orch.runtime().get(n).role == AgentRole::Admin);
    CHECK(orch.supervisor().checklist(n).has_value());
  }
  CHECK(orch.runtime().queue_size("Bob") == 1);
  CHECK(orch.runtime().queue_size("Alice") == 0);
}

TEST_CASE("two empty decompositions end the run as partial") {
  ScriptedScenario s;
  s.default_response = "I will think about it.";
  ScriptedBackend backend(s);
  Orchestrator orch(backend, scripted_profile());
  auto d = orch.run("Build a game.");
  CHECK(d.status == RunStatus::Partial);
  CHECK(d.diagnostic.find("EmptyDecomposition") != std::string::npos);
  CHECK(backend.calls_for("Boss") == 2);
  CHECK(orch.runtime().agent_count() == 1);
}

TEST_CASE("a Boss that terminates immediately yields an empty complete run") {
  ScriptedScenario s;
  s.add("Boss", 0, "Nothing to do.\n" + call("TERMINATE"));
  ScriptedBackend backend(s);
  Orchestrator orch(backend, scripted_profile());
  auto d = orch.run("Say nothing.");
  CHECK(orch.terminated_at_bootstrap());
  CHECK(d.status == RunStatus::Complete);
  CHECK(d.files.empty());
  CHECK(orch.runtime().agent_count() == 1);
}

TEST_CASE("ministers recruiting three each give 1 + k + 3k agents") {
  TempDir dir;
  auto r = run_scenario(branching(3, 2), dir.path());
  CHECK(r.deliverable.status == RunStatus::Complete);
  auto summary = summarize(r.events);
  CHECK(summary.agent_count == 1 + 3 + 9);
  CHECK(summary.hierarchy.level_sizes() == std::vector<std::size_t>{1, 3, 9});
  CHECK(summary.hierarchy.is_tree());
}

TEST_CASE("the Gobang run produces the five files and validations") {
  TempDir dir;
  auto r = run_scenario(gobang(), dir.path());
  REQUIRE(r.deliverable.status == RunStatus::Complete);
  std::vector<std::string> paths;
  for (const auto& f : r.deliverable.files) paths.push_back(f.path);
  CHECK(paths == std::vector<std::string>{"ai.py", "features.txt", "game_design.txt", "game_logic.py", "main.py"});
  CHECK(count(r.events, "validation") >= 1);
  auto summary = summarize(r.events);
  CHECK(summary.agent_count == 7);
  CHECK(summary.hierarchy.level_sizes() == std::vector<std::size_t>{1, 5, 1});
  for (const auto& p : paths) CHECK(r.deliverable.summary.find(p) != std::string::npos);
}

TEST_CASE("ledger totals equal a fold over the logged model calls") {
  TempDir dir;
  auto r = run_scenario(gobang(), dir.path());
  std::map<std::string, TokenUsage> per_stage;
  TokenUsage total;
  std::size_t calls = 0;
  for (const auto& e : r.events) {
    if (e.event != "llm_call") continue;
    TokenUsage u{e.detail["input_tokens"].get<std::uint64_t>(), e.detail["output_tokens"].get<std::uint64_t>()};
    per_stage[e.detail["stage"].get<std::string>()] += u;
    total += u;
    ++calls;
  }
  const auto& report = r.deliverable.report;
  CHECK(report.total == total);
  CHECK(report.total_calls == calls);
  for (const auto& row : report.stages) CHECK(row.usage == per_stage[std::string(to_string(row.stage))]);
  CHECK(report.total.total() == report.total.input_tokens + report.total.output_tokens);
}

TEST_CASE("scripted runs are reproducible") {
  auto hashes = [] {
    TempDir dir;
    auto r = run_scenario(gobang(), dir.path());
    std::vector<std::string> out;
    for (const auto& f : r.deliverable.files) out.push_back(f.path + "=" + f.hash.str());
    return out;
  };
  auto first = hashes();
  CHECK(first.size() == 5);
  CHECK(hashes() == first);
}

TEST_CASE("the deliverable JSON lists files, status and ledger") {
  TempDir dir;
  auto r = run_scenario(gobang(), dir.path());
  auto j = r.deliverable.to_json();
  CHECK(j["status"] == "complete");
  CHECK(j["files"].size() == 5);
  CHECK(j["ledger"]["stages"].size() == 3);
  CHECK(j.contains("summary"));
}

TEST_CASE("branching four over sixteen leaves is two levels below the Boss") {
  TempDir dir;
  auto r = run_scenario(branching(4, 2), dir.path());
  CHECK(r.deliverable.status == RunStatus::Complete);
  auto summary = summarize(r.events);
  CHECK(summary.agent_count == 21);
  CHECK(summary.hierarchy.depth() == 2);
  CHECK(summary.hierarchy.level_sizes() == std::vector<std::size_t>{1, 4, 16});
}
