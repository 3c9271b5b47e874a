// SPDX-License-Identifier: Apache-2.0
// megaagent: run a meta-prompt, replay an event log, or print its report.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "megaagent/config.hpp"
#include "megaagent/error.hpp"
#include "megaagent/log_analysis.hpp"
#include "megaagent/model_gateway.hpp"
#include "megaagent/orchestrator.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace megaagent;

namespace {

constexpr int kOk = 0;
constexpr int kUsage = 1;
constexpr int kPartial = 2;

struct Options {
  std::string meta;
  std::string backend;
  std::string scenario;
  std::string workspace;
  std::string config;
  std::string log;
  bool serial = false;
  bool json_out = false;
};

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(ErrorCode::InvalidConfig, "cannot read " + p.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_json(const fs::path& p, const json& j) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << j.dump(2, ' ', false, json::error_handler_t::replace) << '\n';
}

int cmd_run(const Options& o) {
  // Backend first: it picks the default profile the config file overlays.
  json file_json = json::object();
  if (!o.config.empty()) {
    try {
      file_json = json::parse(read_text(o.config));
    } catch (const json::parse_error& e) {
      throw Error(ErrorCode::InvalidConfig, o.config + ": " + e.what());
    }
  }
  std::string backend_name = o.backend;
  if (backend_name.empty() && file_json.contains("backend") && file_json["backend"].is_string())
    backend_name = file_json["backend"].get<std::string>();
  if (backend_name.empty()) backend_name = "scripted";
  auto kind = parse_backend_kind(backend_name);
  if (!kind) throw Error(ErrorCode::InvalidConfig, "--backend must be scripted or http");

  FileConfig base;
  base.run = *kind == BackendKind::Http ? live_profile() : scripted_profile();
  FileConfig cfg = parse_config(file_json, base);
  apply_environment(cfg, [](const char* name) { return std::getenv(name); });
  cfg.backend = kind;
  if (!o.meta.empty()) cfg.meta_path = o.meta;
  if (!o.scenario.empty()) cfg.scenario_path = o.scenario;
  if (!o.workspace.empty()) cfg.workspace_dir = o.workspace;
  if (o.serial) cfg.run.runtime.serial = true;

  if (!cfg.meta_path) throw Error(ErrorCode::InvalidConfig, "run needs --meta <file>");
  if (*kind == BackendKind::Scripted && !cfg.scenario_path)
    throw Error(ErrorCode::InvalidConfig, "the scripted backend needs --scenario <file>");
  if (*kind == BackendKind::Http && (cfg.http.api_key.empty() || cfg.http.endpoint.empty()))
    throw Error(ErrorCode::InvalidConfig, "the http backend needs an endpoint and MEGA_API_KEY");

  const std::string meta = read_text(*cfg.meta_path);
  const fs::path dir = cfg.workspace_dir.value_or("megaagent-run");
  fs::create_directories(dir);
  cfg.run.workspace_dir = dir;
  cfg.run.log_path = o.log.empty() ? dir / "log.jsonl" : fs::path(o.log);

  std::unique_ptr<ModelBackend> backend;
  if (*kind == BackendKind::Scripted)
    backend = std::make_unique<ScriptedBackend>(ScriptedScenario::load(*cfg.scenario_path), cfg.scripted_latency);
  else
    backend = std::make_unique<HttpBackend>(cfg.http);

  Deliverable d;
  {
    Orchestrator orch(*backend, cfg.run);
    d = orch.run(meta);
  }
  write_json(dir / "deliverable.json", d.to_json());
  write_json(dir / "report.json", d.report.to_json());

  if (o.json_out) {
    std::cout << d.to_json().dump(2, ' ', false, json::error_handler_t::replace) << '\n';
  } else {
    std::cout << d.report.to_table() << "\nstatus: " << to_string(d.status) << "\nfiles:\n";
    for (const auto& f : d.files) std::cout << "  " << f.path << "  " << f.hash.str().substr(0, 12) << '\n';
  }
  if (d.status != RunStatus::Complete) {
    std::cerr << "run stopped early: " << d.diagnostic << '\n';
    return kPartial;
  }
  return kOk;
}

json issues_json(const std::vector<LogIssue>& issues) {
  json out = json::array();
  for (const auto& i : issues) out.push_back({{"line", i.line}, {"message", i.message}});
  return out;
}

void print_issues(const std::vector<LogIssue>& issues) {
  for (const auto& i : issues) {
    if (i.line) std::cerr << "line " << i.line << ": ";
    std::cerr << i.message << '\n';
  }
}

int cmd_replay(const Options& o) {
  if (o.log.empty()) throw Error(ErrorCode::InvalidConfig, "replay needs --log <file>");
  auto loaded = read_log(o.log);
  auto result = replay(loaded);
  if (o.json_out) {
    std::cout << json{{"ok", result.ok()},
                      {"records", loaded.records.size()},
                      {"transitions", result.transitions.size()},
                      {"issues", issues_json(result.issues)}}
                     .dump(2)
              << '\n';
  } else {
    for (const auto& t : result.transitions) std::cout << t << '\n';
  }
  print_issues(result.issues);
  return result.ok() ? kOk : kUsage;
}

int cmd_report(const Options& o) {
  if (o.log.empty()) throw Error(ErrorCode::InvalidConfig, "report needs --log <file>");
  auto loaded = read_log(o.log);
  if (loaded.records.empty() && loaded.issues.empty()) {
    if (o.json_out)
      std::cout << json{{"events", 0}}.dump() << '\n';
    else
      std::cout << "no events\n";
    return kOk;
  }
  if (!loaded.issues.empty()) {
    print_issues(loaded.issues);
    return kUsage;
  }
  auto summary = summarize(loaded.records);
  if (o.json_out)
    std::cout << summary.to_json().dump(2) << '\n';
  else
    std::cout << summary.to_text();
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hierarchical multi-agent runner"};
  app.require_subcommand(1);
  Options o;

  auto* run = app.add_subcommand("run", "Run a meta-prompt to a deliverable");
  run->add_option("--meta", o.meta, "Meta-prompt text file");
  run->add_option("--backend", o.backend, "Model backend: scripted or http");
  run->add_option("--scenario", o.scenario, "Scripted scenario JSON");
  run->add_option("--workspace", o.workspace, "Workspace directory");
  run->add_option("--config", o.config, "Configuration JSON");
  run->add_option("--log", o.log, "Event log path (default <workspace>/log.jsonl)");
  run->add_flag("--serial", o.serial, "Run one agent at a time");
  run->add_flag("--json", o.json_out, "Print the deliverable as JSON");

  auto* rep = app.add_subcommand("replay", "Re-check a run's event log offline");
  rep->add_option("--log,log", o.log, "Event log");
  rep->add_flag("--json", o.json_out, "Machine-readable output");

  auto* report = app.add_subcommand("report", "Print the stage table and hierarchy of a run");
  report->add_option("--log,log", o.log, "Event log");
  report->add_flag("--json", o.json_out, "Machine-readable output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*run) return cmd_run(o);
    if (*rep) return cmd_replay(o);
    return cmd_report(o);
  } catch (const Error& e) {
    std::cerr << "megaagent: " << e.what() << '\n';
    if (e.code() == ErrorCode::InvalidConfig) std::cerr << app.help() << '\n';
    return e.code() == ErrorCode::InvalidConfig ? kUsage : kPartial;
  } catch (const std::exception& e) {
    std::cerr << "megaagent: " << e.what() << '\n';
    return kPartial;
  }
}
