// SPDX-License-Identifier: Apache-2.0
#include "megaagent/metrics.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "megaagent/error.hpp"

namespace megaagent {

std::string_view to_string(StageLabel stage) {
  switch (stage) {
    case StageLabel::Planning: return "Planning";
    case StageLabel::TaskSolving: return "TaskSolving";
    case StageLabel::Merging: return "Merging";
  }
  return "Planning";
}

std::optional<StageLabel> parse_stage(std::string_view text) {
  for (auto s : kAllStages)
    if (to_string(s) == text) return s;
  if (text == "Task-Solving") return StageLabel::TaskSolving;
  return std::nullopt;
}

UsageLedger::UsageLedger() : origin_(Clock::now()) {}
UsageLedger::UsageLedger(Clock::time_point origin) : origin_(origin) {}

double UsageLedger::now() const { return std::chrono::duration<double>(Clock::now() - origin_).count(); }

void UsageLedger::open_stage(StageLabel stage) { open_stage(stage, now()); }

void UsageLedger::open_stage(StageLabel stage, double at) {
  std::lock_guard lock(mutex_);
  if (windows_.contains(stage))
    throw Error(ErrorCode::StageClosed, fmt::format("stage {} already opened", to_string(stage)));
  if (open_) windows_[*open_].end = at;
  windows_[stage] = StageWindow{at, std::nullopt};
  open_ = stage;
}

void UsageLedger::close_stage(StageLabel stage) { close_stage(stage, now()); }

void UsageLedger::close_stage(StageLabel stage, double at) {
  std::lock_guard lock(mutex_);
  auto it = windows_.find(stage);
  if (it == windows_.end() || it->second.end)
    throw Error(ErrorCode::StageClosed, fmt::format("stage {} is not open", to_string(stage)));
  it->second.end = at;
  if (open_ == stage) open_.reset();
}

std::optional<StageLabel> UsageLedger::current_stage() const {
  std::lock_guard lock(mutex_);
  return open_;
}

void UsageLedger::record(std::string agent, StageLabel stage, TokenUsage usage, double duration) {
  record(std::move(agent), stage, usage, now(), duration);
}

void UsageLedger::record(std::string agent, StageLabel stage, TokenUsage usage, double started_at,
                         double duration) {
  std::lock_guard lock(mutex_);
  auto it = windows_.find(stage);
  if (it == windows_.end())
    throw Error(ErrorCode::StageClosed, fmt::format("stage {} was never opened", to_string(stage)));
  const auto& w = it->second;
  if (started_at < w.start || (w.end && started_at > *w.end))
    throw Error(ErrorCode::StageClosed,
                fmt::format("call at {:.6f}s lies outside the {} window", started_at, to_string(stage)));
  entries_.push_back(LedgerEntry{std::move(agent), stage, usage, started_at, duration});
}

std::vector<LedgerEntry> UsageLedger::entries() const {
  std::lock_guard lock(mutex_);
  return entries_;
}

std::map<StageLabel, StageWindow> UsageLedger::windows() const {
  std::lock_guard lock(mutex_);
  return windows_;
}

std::string format_ratio(double ratio) {
  double rounded = std::round(ratio * 10.0) / 10.0;
  if (rounded == std::floor(rounded)) return fmt::format("{:.0f}:1", rounded);
  return fmt::format("{:.1f}:1", rounded);
}

StageReport make_report(const std::vector<LedgerEntry>& entries,
                        const std::map<StageLabel, StageWindow>& windows, std::size_t agent_count) {
  StageReport report;
  for (auto stage : kAllStages) {
    StageRow row;
    row.stage = stage;
    if (auto it = windows.find(stage); it != windows.end()) {
      row.window_start = it->second.start;
      row.window_end = it->second.end;
    }
    report.stages.push_back(row);
  }

  std::map<std::string, AgentTiming> per_agent;
  for (const auto& e : entries) {
    auto& row = report.stages[static_cast<std::size_t>(e.stage)];
    row.usage += e.usage;
    ++row.calls;
    auto& timing = per_agent[e.agent];
    timing.agent = e.agent;
    ++timing.calls;
    timing.usage += e.usage;
    timing.model_time += e.duration;
  }
  for (const auto& row : report.stages) {
    report.total += row.usage;
    report.total_calls += row.calls;
  }

  std::optional<double> first, last;
  for (const auto& [stage, w] : windows) {
    first = first ? std::min(*first, w.start) : w.start;
    double end = w.end.value_or(w.start);
    last = last ? std::max(*last, end) : end;
  }
  report.wall_time = (first && last) ? *last - *first : 0.0;
  report.agent_count = agent_count;
  report.time_per_agent = agent_count ? report.wall_time / static_cast<double>(agent_count) : 0.0;
  if (report.total.output_tokens > 0)
    report.input_output_ratio =
        static_cast<double>(report.total.input_tokens) / static_cast<double>(report.total.output_tokens);
  for (auto& [name, timing] : per_agent) report.per_agent.push_back(timing);
  return report;
}

StageReport make_report(const UsageLedger& ledger, std::size_t agent_count) {
  return make_report(ledger.entries(), ledger.windows(), agent_count);
}

namespace {

nlohmann::json usage_json(const TokenUsage& u) {
  return {{"input_tokens", u.input_tokens}, {"output_tokens", u.output_tokens}, {"total_tokens", u.total()}};
}

std::string grouped(std::uint64_t n) {
  std::string digits = std::to_string(n);
  std::string out;
  int count = 0;
  for (auto it = digits.rbegin(); it != digits.rend(); ++it) {
    if (count && count % 3 == 0) out.push_back(',');
    out.push_back(*it);
    ++count;
  }
  return {out.rbegin(), out.rend()};
}

std::string window_text(const StageRow& row) {
  if (!row.window_start) return "N/A";
  if (!row.window_end) return fmt::format("{:.2f}-", *row.window_start);
  return fmt::format("{:.2f}-{:.2f}", *row.window_start, *row.window_end);
}

}  // namespace

nlohmann::json StageReport::to_json() const {
  nlohmann::json j;
  j["stages"] = nlohmann::json::array();
  for (const auto& row : stages) {
    nlohmann::json s = usage_json(row.usage);
    s["stage"] = to_string(row.stage);
    s["calls"] = row.calls;
    nlohmann::json time = nlohmann::json::object();
    time["start"] = row.window_start ? nlohmann::json(*row.window_start) : nlohmann::json(nullptr);
    time["end"] = row.window_end ? nlohmann::json(*row.window_end) : nlohmann::json(nullptr);
    s["time"] = time;
    j["stages"].push_back(s);
  }
  j["total"] = usage_json(total);
  j["total"]["calls"] = total_calls;
  j["total"]["time"] = wall_time;
  j["agents"] = agent_count;
  j["time_per_agent"] = time_per_agent;
  if (input_output_ratio) {
    j["input_output_ratio"] = *input_output_ratio;
    j["input_output_ratio_text"] = format_ratio(*input_output_ratio);
  } else {
    j["input_output_ratio"] = nullptr;
  }
  j["per_agent"] = nlohmann::json::array();
  for (const auto& a : per_agent) {
    nlohmann::json pa = usage_json(a.usage);
    pa["agent"] = a.agent;
    pa["calls"] = a.calls;
    pa["model_time"] = a.model_time;
    j["per_agent"].push_back(pa);
  }
  return j;
}

std::string StageReport::to_table() const {
  std::vector<std::array<std::string, 5>> rows;
  rows.push_back({"Stage", "# Input Tokens", "# Output Tokens", "# Total Tokens", "Time (s)"});
  for (const auto& row : stages) {
    rows.push_back({row.stage == StageLabel::TaskSolving ? "Task-Solving" : std::string(to_string(row.stage)),
                    grouped(row.usage.input_tokens), grouped(row.usage.output_tokens),
                    grouped(row.usage.total()), window_text(row)});
  }
  rows.push_back({"Total", grouped(total.input_tokens), grouped(total.output_tokens), grouped(total.total()),
                  fmt::format("{:.2f}", wall_time)});

  std::array<std::size_t, 5> width{};
  for (const auto& r : rows)
    for (std::size_t c = 0; c < r.size(); ++c) width[c] = std::max(width[c], r[c].size());

  auto line = [&](const std::array<std::string, 5>& r) {
    std::string out = fmt::format("{:<{}}", r[0], width[0]);
    for (std::size_t c = 1; c < r.size(); ++c) out += fmt::format(" | {:>{}}", r[c], width[c]);
    return out + "\n";
  };
  std::string rule(width[0] + width[1] + width[2] + width[3] + width[4] + 12, '-');
  std::string out = line(rows.front()) + rule + "\n";
  for (std::size_t i = 1; i + 1 < rows.size(); ++i) out += line(rows[i]);
  out += rule + "\n" + line(rows.back());
  if (input_output_ratio) out += fmt::format("input:output = {}\n", format_ratio(*input_output_ratio));
  if (agent_count) out += fmt::format("agents: {}  time/agent: {:.3f}s\n", agent_count, time_per_agent);
  return out;
}

}  // namespace megaagent
