// SPDX-License-Identifier: Apache-2.0
#include "scenarios.hpp"

#include <cstdlib>
#include <fstream>
#include <random>

#include <fmt/core.h>

#include "megaagent/config.hpp"
#include "megaagent/log_analysis.hpp"
#include "megaagent/supervisor.hpp"

namespace megaagent::testing {

namespace fs = std::filesystem;

TempDir::TempDir(const std::string& tag) {
  std::string templ = (fs::temp_directory_path() / (tag + "-XXXXXX")).string();
  if (!mkdtemp(templ.data())) throw std::runtime_error("mkdtemp failed");
  path_ = templ;
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

std::string call(const std::string& tool, const std::map<std::string, std::string>& args) {
  return format_call(FunctionCall{tool, args});
}

std::string talk(const std::string& to, const std::string& text) { return format_dispatch(Dispatch{to, text}); }

std::string employee(const std::string& name, const std::string& body) {
  return "<employee name=\"" + name + "\">\n" + body + "\n</employee>\n";
}

std::string todo_path(const std::string& agent) { return Checklist::storage_path(agent); }

std::string done_checklist(const std::string& item) { return "1. " + item + " [done]\n"; }

std::size_t script_finish(ScriptedScenario& s, const std::string& agent, std::size_t index,
                          const std::string& last_extra) {
  s.add(agent, index++, "Checking my TODO list.\n" + call("read_file", {{"filename", todo_path(agent)}}));
  s.add(agent, index++,
        "Marking my work done.\n" + call("write_file", {{"filename", todo_path(agent)}, {"content", done_checklist()}}));
  s.add(agent, index++, "All items are done. " + last_extra + "\n" + call("TERMINATE"));
  return index;
}

namespace {

std::string write(const std::string& file, const std::string& content) {
  return call("write_file", {{"filename", file}, {"content", content}});
}

}  // namespace

Scenario gobang() {
  Scenario sc;
  sc.meta_prompt =
      "Develop a Gobang game with an AI opponent. The player and the AI take turns placing stones on a 15x15 "
      "board; five in a row wins.";
  sc.config = scripted_profile();
  auto& s = sc.script;
  s.default_response = "Nothing further from me at this point.";

  s.add("Boss", 0,
        "Here is the team.\n" +
            employee("Bob", "You are Bob, the product manager. Write features.txt listing the game features, then "
                            "hand over to Alice.") +
            employee("Alice", "You are Alice, the game designer. Write game_design.txt from the features and brief "
                              "Carol and David.") +
            employee("Carol", "You are Carol, the lead developer. Implement game_logic.py; recruit a helper for the "
                              "AI opponent.") +
            employee("David", "You are David, the UI developer. Implement main.py and ask Eve to test it.") +
            employee("Eve", "You are Eve, the tester. Review main.py and report problems.") +
            "<beginner>Bob</beginner>");

  s.add("Bob", 0,
        "Writing the feature list.\n" +
            write("features.txt", "1. 15x15 board\n2. Player versus AI turns\n3. Five in a row wins\n4. Restart\n"));
  script_finish(s, "Bob", 1, talk("Alice", "features.txt is ready; please write the design."));

  s.add("Alice", 0,
        "Writing the design.\n" +
            write("game_design.txt",
                  "Modules: game_logic.py (board, moves, win check), ai.py (opponent), main.py (text UI).\n"));
  script_finish(s, "Alice", 1,
                talk("Carol", "game_design.txt is ready; implement game_logic.py and ai.py.") +
                    talk("David", "game_design.txt is ready; implement main.py."));

  s.add("Carol", 0,
        "I need help with the AI.\n" +
            call("add_agent", {{"name", "Frank"},
                               {"description", "You are Frank, an AI developer. Implement ai.py for Gobang."}}));
  s.add("Carol", 1,
        "Writing the game logic.\n" +
            write("game_logic.py",
                  "SIZE = 15\n\n\ndef new_board():\n    return [[0] * SIZE for _ in range(SIZE)]\n\n\n"
                  "def place(board, r, c, who):\n    if board[r][c]:\n        return False\n"
                  "    board[r][c] = who\n    return True\n\n\n"
                  "def wins(board, who):\n    for r in range(SIZE):\n        for c in range(SIZE):\n"
                  "            for dr, dc in ((0, 1), (1, 0), (1, 1), (1, -1)):\n"
                  "                if all(0 <= r + k * dr < SIZE and 0 <= c + k * dc < SIZE and "
                  "board[r + k * dr][c + k * dc] == who for k in range(5)):\n"
                  "                    return True\n    return False\n"));
  script_finish(s, "Carol", 2, talk("Frank", "Please implement ai.py against game_logic.py."));

  s.add("Frank", 0,
        "Writing the AI.\n" +
            write("ai.py",
                  "from game_logic import SIZE\n\n\ndef choose(board):\n    for r in range(SIZE):\n"
                  "        for c in range(SIZE):\n            if not board[r][c]:\n"
                  "                return r, c\n    return None\n"));
  script_finish(s, "Frank", 1);

  s.add("David", 0,
        "Writing the entry point.\n" +
            write("main.py",
                  "from game_logic import new_board, place, wins\nfrom ai import choose\n\n\n"
                  "def main():\n    board = new_board()\n    print('Gobang ready')\n\n\n"
                  "if __name__ == '__main__':\n    main()\n"));
  script_finish(s, "David", 1, talk("Eve", "main.py is ready for testing."));

  s.add("Eve", 0, "Reading the entry point.\n" + call("read_file", {{"filename", "main.py"}}));
  script_finish(s, "Eve", 1);

  s.add("Carol#review", 0, "ACCEPT");
  s.add("Boss#review", 0, "ACCEPT");
  return sc;
}

Scenario flat_leaves(std::size_t leaves) {
  Scenario sc;
  sc.meta_prompt = "Solve a set of independent subtasks.";
  sc.config = scripted_profile();
  sc.config.orchestrator.initial_checklist.clear();
  auto& s = sc.script;
  s.default_response = "Nothing further.";
  std::string decomposition = "Independent workers:\n";
  for (std::size_t i = 1; i <= leaves; ++i) {
    auto name = fmt::format("Leaf{:02}", i);
    decomposition += employee(name, "Solve subtask " + std::to_string(i) + ".");
    s.add(name, 0, fmt::format("Subtask {} needs no files.\n", i) + call("TERMINATE"));
  }
  s.add("Boss", 0, decomposition);
  s.add("Boss#review", 0, "ACCEPT");
  return sc;
}

namespace {

void script_recruiter(Scenario& sc, const std::string& name, std::size_t branching, std::size_t levels_left,
                      bool has_checklist) {
  auto& s = sc.script;
  if (levels_left == 0) {
    script_finish(s, name, 0);
    return;
  }
  std::string recruit = "Recruiting my team.\n";
  std::string kickoff;
  for (std::size_t i = 1; i <= branching; ++i) {
    auto child = name + "_" + std::to_string(i);
    recruit += call("add_agent", {{"name", child}, {"description", "Worker " + child + "."}});
    kickoff += talk(child, "Start on your part.");
    script_recruiter(sc, child, branching, levels_left - 1, true);
  }
  s.add(name, 0, recruit);
  if (has_checklist)
    script_finish(s, name, 1, kickoff);
  else
    s.add(name, 1, "Team assigned.\n" + kickoff + "\n" + call("TERMINATE"));
  s.add(name + "#review", 0, "ACCEPT");
}

}  // namespace

Scenario branching(std::size_t factor, std::size_t depth) {
  Scenario sc;
  sc.meta_prompt = "Draft a policy with many specialists.";
  sc.config = scripted_profile();
  sc.config.orchestrator.initial_checklist.clear();
  auto& s = sc.script;
  s.default_response = "Nothing further.";
  std::string decomposition;
  for (std::size_t i = 1; i <= factor; ++i) {
    auto name = "A" + std::to_string(i);
    decomposition += employee(name, "Lead section " + std::to_string(i) + ".");
    script_recruiter(sc, name, factor, depth - 1, false);
  }
  s.add("Boss", 0, decomposition);
  s.add("Boss#review", 0, "ACCEPT");
  return sc;
}

namespace {

Scenario single_worker(const std::string& goal) {
  Scenario sc;
  sc.meta_prompt = goal;
  sc.config = scripted_profile();
  sc.script.default_response = "Nothing further.";
  sc.script.add("Boss", 0, employee("Worker", "You are Worker. " + goal) + "<beginner>Worker</beginner>");
  sc.script.add("Boss#review", 0, "ACCEPT");
  return sc;
}

}  // namespace

Scenario premature_terminate() {
  Scenario sc = single_worker("Write report.txt summarizing the findings.");
  auto& s = sc.script;
  s.add("Worker", 0, "I think I am done.\n" + call("TERMINATE"));
  s.add("Worker", 1, "Writing the report.\n" + write("report.txt", "Findings: none.\n"));
  script_finish(s, "Worker", 2);
  return sc;
}

Scenario repeated_action() {
  Scenario sc = single_worker("Write notes.txt with the plan.");
  auto& s = sc.script;
  const auto peek = call("read_file", {{"filename", todo_path("Worker")}});
  s.add("Worker", 0, "Let me look.\n" + peek);
  s.add("Worker", 1, "Let me look again.\n" + peek);
  s.add("Worker", 2, "One more look.\n" + peek);
  s.add("Worker", 3, "Still thinking about the plan.");
  s.add("Worker", 4, "Writing the plan.\n" + write("notes.txt", "Plan: ship it.\n"));
  script_finish(s, "Worker", 5);
  return sc;
}

Scenario refusal() {
  Scenario sc = single_worker("Write answer.txt with the answer.");
  auto& s = sc.script;
  s.add("Worker", 0, "Sorry, I can't help with that.");
  s.add("Worker_r1", 0, "Taking over.\n" + write("answer.txt", "42\n"));
  s.add("Worker_r1", 1, "Checking my TODO list.\n" + call("read_file", {{"filename", todo_path("Worker_r1")}}));
  s.add("Worker_r1", 2,
        "Marking my work done.\n" +
            call("write_file", {{"filename", todo_path("Worker_r1")}, {"content", done_checklist()}}));
  s.add("Worker_r1", 3, "Done.\n" + call("TERMINATE"));
  return sc;
}

RunResult run_scenario(const Scenario& scenario, const fs::path& dir, std::chrono::milliseconds latency,
                       bool serial) {
  RunResult out;
  RunConfig cfg = scenario.config;
  cfg.workspace_dir = dir / "ws";
  cfg.log_path = dir / "log.jsonl";
  cfg.runtime.serial = serial;
  fs::create_directories(*cfg.workspace_dir);
  ScriptedBackend backend(scenario.script, latency);
  {
    Orchestrator orch(backend, cfg);
    out.deliverable = orch.run(scenario.meta_prompt);
  }
  out.log_path = *cfg.log_path;
  out.events = load_events(out.log_path);
  return out;
}

std::vector<EventRecord> load_events(const fs::path& log_path) { return read_log(log_path).records; }

nlohmann::json scenario_config_json(const Scenario& scenario) {
  nlohmann::json j = nlohmann::json::object();
  const auto& wanted = scenario.config.orchestrator.initial_checklist;
  if (wanted != scripted_profile().orchestrator.initial_checklist) j["orchestrator"]["initial_checklist"] = wanted;
  return j;
}

void write_fixture(const Scenario& scenario, const fs::path& dir, const std::string& name) {
  fs::create_directories(dir);
  scenario.script.save(dir / (name + ".scenario.json"));
  std::ofstream(dir / (name + ".meta.txt")) << scenario.meta_prompt;
  std::ofstream(dir / (name + ".config.json")) << scenario_config_json(scenario).dump(2) << "\n";
}

Rig::Rig(ScriptedScenario script, RuntimeConfig runtime_config, SupervisorConfig supervisor_config,
         SandboxPolicy sandbox, std::optional<fs::path> workspace_dir)
    : ledger(log.origin()),
      backend(std::move(script)),
      gateway(backend, ledger, &log),
      workspace(workspace_dir ? std::make_unique<Workspace>(*workspace_dir, &log) : std::make_unique<Workspace>()),
      runtime(runtime_config, log),
      supervisor(runtime, *workspace, gateway, supervisor_config, sandbox),
      tools(runtime, *workspace, supervisor, sandbox),
      ctx{runtime, gateway, tools, *workspace, memory, supervisor, runtime_config.serial ? &gate : nullptr} {
  const double at = ledger.now();
  ledger.open_stage(StageLabel::TaskSolving, at);
  log.append("orchestrator", "stage", nlohmann::json{{"stage", "TaskSolving"}, {"edge", "open"}, {"at", at}});
}

Rig::~Rig() {
  runtime.request_shutdown();
  tools.release_all();
}

void Rig::team(const std::vector<std::string>& admins) {
  runtime.add_boss("Boss", "Lead the project.");
  for (const auto& a : admins) runtime.spawn_agent("Boss", a, "You are " + a + ".");
}

}  // namespace megaagent::testing
