// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "megaagent/event_log.hpp"
#include "megaagent/metrics.hpp"
#include "megaagent/runtime.hpp"

namespace megaagent {

struct LogIssue {
  std::size_t line = 0;  // one-based; 0 for whole-log findings
  std::string message;
};

struct LoadedLog {
  std::vector<EventRecord> records;
  std::vector<LogIssue> issues;  // unparseable lines
  bool truncated = false;        // last line unparseable or no run_end
};

LoadedLog read_log(const std::filesystem::path& path);
LoadedLog parse_log(std::string_view content);

struct ReplayResult {
  std::vector<std::string> transitions;  // "Alice Idle->Processing" in log order
  std::vector<LogIssue> issues;
  bool ok() const { return issues.empty(); }
};

/// Re-checks the runtime invariants offline: legal state edges, batch
/// conservation, model calls only while Processing, one verify verdict per
/// Processing cycle, calls inside their stage window, and a tree of spawns.
ReplayResult replay(const LoadedLog& log);

struct LogSummary {
  StageReport report;
  Hierarchy hierarchy;
  std::size_t agent_count = 0;
  std::string status;  // from run_end, empty if absent
  nlohmann::json to_json() const;
  std::string to_text() const;
};

/// Rebuilds the stage table and hierarchy from llm_call, stage and spawn
/// events.
LogSummary summarize(const std::vector<EventRecord>& records);

}  // namespace megaagent
