// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <chrono>
#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace megaagent {

enum class StageLabel { Planning, TaskSolving, Merging };

inline constexpr std::array<StageLabel, 3> kAllStages{StageLabel::Planning, StageLabel::TaskSolving,
                                                      StageLabel::Merging};

std::string_view to_string(StageLabel stage);
std::optional<StageLabel> parse_stage(std::string_view text);

struct TokenUsage {
  std::uint64_t input_tokens = 0;
  std::uint64_t output_tokens = 0;

  std::uint64_t total() const { return input_tokens + output_tokens; }
  TokenUsage& operator+=(const TokenUsage& other) {
    input_tokens += other.input_tokens;
    output_tokens += other.output_tokens;
    return *this;
  }
  friend bool operator==(const TokenUsage&, const TokenUsage&) = default;
};

struct LedgerEntry {
  std::string agent;
  StageLabel stage = StageLabel::Planning;
  TokenUsage usage;
  double timestamp = 0.0;  // call start, seconds since ledger origin
  double duration = 0.0;   // seconds
};

struct StageWindow {
  double start = 0.0;
  std::optional<double> end;  // open while empty
};

/// Stage-labelled token and time accounting.
///
/// A stage window is opened and closed exactly once. An entry may be recorded
/// for a stage whose window was open when the call started; the stage is
/// attributed at call start, so a call that straddles a boundary still lands
/// in the stage it began in.
class UsageLedger {
 public:
  using Clock = std::chrono::steady_clock;

  UsageLedger();
  explicit UsageLedger(Clock::time_point origin);

  double now() const;

  /// Opens `stage` at the current time, closing the previous open stage.
  void open_stage(StageLabel stage);
  void open_stage(StageLabel stage, double at);
  void close_stage(StageLabel stage);
  void close_stage(StageLabel stage, double at);

  /// The latest opened and not yet closed stage.
  std::optional<StageLabel> current_stage() const;

  /// Throws Error(StageClosed) if `started_at` is outside the stage's window
  /// or the stage was never opened.
  void record(std::string agent, StageLabel stage, TokenUsage usage, double started_at, double duration);
  void record(std::string agent, StageLabel stage, TokenUsage usage, double duration);

  std::vector<LedgerEntry> entries() const;
  std::map<StageLabel, StageWindow> windows() const;

 private:
  Clock::time_point origin_;
  mutable std::mutex mutex_;
  std::vector<LedgerEntry> entries_;
  std::map<StageLabel, StageWindow> windows_;
  std::optional<StageLabel> open_;
};

struct StageRow {
  StageLabel stage = StageLabel::Planning;
  TokenUsage usage;
  std::size_t calls = 0;
  std::optional<double> window_start;
  std::optional<double> window_end;
};

struct AgentTiming {
  std::string agent;
  std::size_t calls = 0;
  TokenUsage usage;
  double model_time = 0.0;
};

struct StageReport {
  std::vector<StageRow> stages;  // always Planning, TaskSolving, Merging
  TokenUsage total;
  std::size_t total_calls = 0;
  double wall_time = 0.0;
  std::size_t agent_count = 0;
  double time_per_agent = 0.0;
  std::optional<double> input_output_ratio;  // input / output, absent if no output
  std::vector<AgentTiming> per_agent;         // sorted by agent name

  nlohmann::json to_json() const;
  /// Aligned plain-text table: Stage | # Input Tokens | # Output Tokens | # Total Tokens | Time (s)
  std::string to_table() const;
};

/// Formats an input:output ratio the way cost tables do, e.g. 25 -> "25:1".
std::string format_ratio(double ratio);

StageReport make_report(const std::vector<LedgerEntry>& entries,
                        const std::map<StageLabel, StageWindow>& windows, std::size_t agent_count);
StageReport make_report(const UsageLedger& ledger, std::size_t agent_count);

}  // namespace megaagent
