// SPDX-License-Identifier: Apache-2.0
#include "megaagent/log_analysis.hpp"

#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <fmt/core.h>

#include "megaagent/agent.hpp"
#include "megaagent/text_util.hpp"

namespace megaagent {

using nlohmann::json;

LoadedLog parse_log(std::string_view content) {
  LoadedLog out;
  auto lines = text::split_lines(content);
  // A trailing newline yields one empty last element; ignore it.
  while (!lines.empty() && text::trim(lines.back()).empty()) lines.pop_back();
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (text::trim(lines[i]).empty()) continue;
    try {
      out.records.push_back(EventRecord::from_json(json::parse(lines[i])));
    } catch (const std::exception&) {
      if (i + 1 == lines.size()) {
        out.truncated = true;
        out.issues.push_back({i + 1, "unexpected end of log"});
      } else {
        out.issues.push_back({i + 1, "unparseable record"});
      }
    }
  }
  if (!out.truncated && !out.records.empty() && out.records.back().event != "run_end") {
    out.truncated = true;
    out.issues.push_back({lines.size(), "unexpected end of log"});
  }
  return out;
}

LoadedLog read_log(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    LoadedLog out;
    out.issues.push_back({0, "cannot read " + path.string()});
    out.truncated = true;
    return out;
  }
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_log(buf.str());
}

namespace {

std::string str_or(const json& j, const char* key, std::string fallback = {}) {
  return j.is_object() && j.contains(key) && j[key].is_string() ? j[key].get<std::string>() : fallback;
}

}  // namespace

ReplayResult replay(const LoadedLog& log) {
  ReplayResult r;
  r.issues = log.issues;
  auto issue = [&](std::size_t line, std::string msg) { r.issues.push_back({line, std::move(msg)}); };

  std::map<std::string, AgentState> state;
  std::map<std::string, std::size_t> processing_entries, verdicts;
  std::map<std::uint64_t, std::string> pending;  // seq -> recipient
  std::set<std::uint64_t> consumed;
  std::map<std::string, std::pair<double, std::optional<double>>> windows;
  std::optional<std::string> root;
  std::string status;

  for (std::size_t i = 0; i < log.records.size(); ++i) {
    const auto& e = log.records[i];
    const std::size_t line = i + 1;
    const auto& d = e.detail;
    try {
      if (e.event == "spawn") {
        if (state.count(e.agent)) issue(line, "agent " + e.agent + " spawned twice");
        if (d.contains("parent") && !d["parent"].is_null()) {
          auto parent = d["parent"].get<std::string>();
          if (!state.count(parent)) issue(line, "agent " + e.agent + " spawned under unknown parent " + parent);
        } else {
          if (root) issue(line, "second root agent " + e.agent);
          root = e.agent;
        }
        state[e.agent] = AgentState::Idle;
      } else if (e.event == "transition") {
        auto from = parse_agent_state(str_or(d, "from"));
        auto to = parse_agent_state(str_or(d, "to"));
        auto edge = str_or(d, "from") + "->" + str_or(d, "to");
        r.transitions.push_back(e.agent + " " + edge);
        if (!state.count(e.agent)) {
          issue(line, "transition for unknown agent " + e.agent);
          continue;
        }
        if (!from || !to || !is_legal_transition(*from, *to)) {
          issue(line, "illegal transition " + edge + " for " + e.agent);
        } else if (state[e.agent] != *from) {
          issue(line, fmt::format("transition {} for {} but the agent was {}", edge, e.agent,
                                  to_string(state[e.agent])));
        }
        if (to) {
          if (*to == AgentState::Processing) ++processing_entries[e.agent];
          state[e.agent] = *to;
        }
      } else if (e.event == "enqueue") {
        auto seq = d.at("seq").get<std::uint64_t>();
        if (pending.count(seq) || consumed.count(seq)) issue(line, fmt::format("message {} enqueued twice", seq));
        pending[seq] = d.at("recipient").get<std::string>();
      } else if (e.event == "batch") {
        for (const auto& s : d.at("seqs")) {
          auto seq = s.get<std::uint64_t>();
          auto it = pending.find(seq);
          if (consumed.count(seq)) {
            issue(line, fmt::format("message {} delivered twice", seq));
          } else if (it == pending.end()) {
            issue(line, fmt::format("message {} delivered but never enqueued", seq));
          } else if (it->second != e.agent) {
            issue(line, fmt::format("message {} for {} delivered to {}", seq, it->second, e.agent));
          } else {
            pending.erase(it);
            consumed.insert(seq);
          }
        }
      } else if (e.event == "llm_call") {
        if (str_or(d, "conversation").empty()) {
          auto it = state.find(e.agent);
          if (it == state.end() || it->second != AgentState::Processing)
            issue(line, "model call by " + e.agent + " outside Processing");
        }
        auto stage = str_or(d, "stage");
        auto w = windows.find(stage);
        double started = d.value("started", e.ts);
        if (w == windows.end()) {
          issue(line, "model call in unopened stage " + stage);
        } else if (started + 1e-9 < w->second.first || (w->second.second && started > *w->second.second + 1e-9)) {
          issue(line, fmt::format("model call started at {:.3f} outside the {} window", started, stage));
        }
      } else if (e.event == "verify") {
        ++verdicts[e.agent];
      } else if (e.event == "stage") {
        auto stage = str_or(d, "stage");
        double at = d.value("at", e.ts);
        if (str_or(d, "edge") == "open") {
          if (windows.count(stage)) issue(line, "stage " + stage + " reopened");
          windows[stage] = {at, std::nullopt};
        } else if (windows.count(stage)) {
          windows[stage].second = at;
        }
      } else if (e.event == "run_end") {
        status = str_or(d, "status");
      }
    } catch (const json::exception& ex) {
      issue(line, std::string("malformed ") + e.event + " record: " + ex.what());
    }
  }

  for (const auto& [agent, n] : processing_entries) {
    std::size_t v = verdicts.count(agent) ? verdicts[agent] : 0;
    if (v != n) issue(0, fmt::format("{} entered Processing {} times but has {} verify verdicts", agent, n, v));
  }
  if (status == "complete") {
    for (const auto& [seq, who] : pending) issue(0, fmt::format("message {} to {} was never consumed", seq, who));
    for (const auto& [agent, s] : state)
      if (s == AgentState::Processing) issue(0, agent + " was still Processing at the end");
  }
  return r;
}

json LogSummary::to_json() const {
  json levels = json::array();
  for (auto n : hierarchy.level_sizes()) levels.push_back(n);
  return json{{"agents", agent_count},
              {"depth", hierarchy.depth()},
              {"level_sizes", levels},
              {"status", status},
              {"report", report.to_json()}};
}

std::string LogSummary::to_text() const {
  std::string out = report.to_table();
  out += fmt::format("\nagents: {}\ndepth: {}\nlevel sizes:", agent_count, hierarchy.depth());
  auto sizes = hierarchy.level_sizes();
  for (std::size_t l = 0; l < sizes.size(); ++l) out += fmt::format(" L{}={}", l, sizes[l]);
  out += "\n";
  if (!status.empty()) out += "status: " + status + "\n";
  return out;
}

LogSummary summarize(const std::vector<EventRecord>& records) {
  LogSummary s;
  std::vector<LedgerEntry> entries;
  std::map<StageLabel, StageWindow> windows;
  for (const auto& e : records) {
    const auto& d = e.detail;
    if (e.event == "spawn") {
      s.hierarchy.level[e.agent] = d.value("level", std::size_t{0});
      s.hierarchy.children[e.agent];
      if (d.contains("parent") && d["parent"].is_string()) {
        auto parent = d["parent"].get<std::string>();
        s.hierarchy.parent[e.agent] = parent;
        s.hierarchy.children[parent].push_back(e.agent);
      } else {
        s.hierarchy.root = e.agent;
      }
    } else if (e.event == "llm_call") {
      auto stage = parse_stage(str_or(d, "stage"));
      if (!stage) continue;
      LedgerEntry le;
      le.agent = e.agent;
      le.stage = *stage;
      le.usage = {d.value("input_tokens", std::uint64_t{0}), d.value("output_tokens", std::uint64_t{0})};
      le.timestamp = d.value("started", e.ts);
      le.duration = d.value("duration", 0.0);
      entries.push_back(std::move(le));
    } else if (e.event == "stage") {
      auto stage = parse_stage(str_or(d, "stage"));
      if (!stage) continue;
      double at = d.value("at", e.ts);
      if (str_or(d, "edge") == "open")
        windows[*stage] = StageWindow{at, std::nullopt};
      else if (windows.count(*stage))
        windows[*stage].end = at;
    } else if (e.event == "run_end") {
      s.status = str_or(d, "status");
    }
  }
  s.agent_count = s.hierarchy.size();
  s.report = make_report(entries, windows, s.agent_count);
  return s;
}

}  // namespace megaagent
