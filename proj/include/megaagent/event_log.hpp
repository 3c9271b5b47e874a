// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <string>
#include <vector>

#include <json.hpp>

namespace megaagent {

struct EventRecord {
  double ts = 0.0;  // seconds since the log was opened
  std::string agent;
  std::string event;
  nlohmann::json detail;

  nlohmann::json to_json() const;
  static EventRecord from_json(const nlohmann::json& j);
};

/// Append-only JSONL event log. Every record is kept in memory and, when a
/// path is given, flushed line by line to disk. Appends are totally ordered.
class EventLog {
 public:
  using Clock = std::chrono::steady_clock;

  EventLog();
  explicit EventLog(const std::filesystem::path& path);

  void append(std::string agent, std::string event, nlohmann::json detail = nlohmann::json::object());

  std::vector<EventRecord> snapshot() const;
  std::vector<EventRecord> filter(std::string_view event) const;
  std::size_t size() const;

  double now() const;
  /// Timestamp of the most recent append (or 0 before any).
  double last_event_time() const;

  Clock::time_point origin() const { return origin_; }

 private:
  Clock::time_point origin_;
  mutable std::mutex mutex_;
  std::vector<EventRecord> records_;
  std::ofstream out_;
  double last_ts_ = 0.0;
};

}  // namespace megaagent
