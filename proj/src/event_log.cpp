// SPDX-License-Identifier: Apache-2.0
#include "megaagent/event_log.hpp"

#include "megaagent/error.hpp"

namespace megaagent {

nlohmann::json EventRecord::to_json() const {
  return nlohmann::json{{"ts", ts}, {"agent", agent}, {"event", event}, {"detail", detail}};
}

EventRecord EventRecord::from_json(const nlohmann::json& j) {
  EventRecord r;
  r.ts = j.at("ts").get<double>();
  r.agent = j.at("agent").get<std::string>();
  r.event = j.at("event").get<std::string>();
  r.detail = j.value("detail", nlohmann::json::object());
  return r;
}

EventLog::EventLog() : origin_(Clock::now()) {}

EventLog::EventLog(const std::filesystem::path& path) : origin_(Clock::now()) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  out_.open(path, std::ios::out | std::ios::trunc);
  if (!out_) throw Error(ErrorCode::InvalidConfig, "cannot open event log " + path.string());
}

double EventLog::now() const {
  return std::chrono::duration<double>(Clock::now() - origin_).count();
}

void EventLog::append(std::string agent, std::string event, nlohmann::json detail) {
  std::lock_guard lock(mutex_);
  EventRecord r{now(), std::move(agent), std::move(event), std::move(detail)};
  // Keep timestamps monotone in append order even if the clock read raced.
  if (r.ts < last_ts_) r.ts = last_ts_;
  last_ts_ = r.ts;
  if (out_.is_open()) {
    out_ << r.to_json().dump(-1, ' ', false, nlohmann::json::error_handler_t::replace) << '\n';
    out_.flush();
  }
  records_.push_back(std::move(r));
}

std::vector<EventRecord> EventLog::snapshot() const {
  std::lock_guard lock(mutex_);
  return records_;
}

std::vector<EventRecord> EventLog::filter(std::string_view event) const {
  std::lock_guard lock(mutex_);
  std::vector<EventRecord> out;
  for (const auto& r : records_)
    if (r.event == event) out.push_back(r);
  return out;
}

std::size_t EventLog::size() const {
  std::lock_guard lock(mutex_);
  return records_.size();
}

double EventLog::last_event_time() const {
  std::lock_guard lock(mutex_);
  return last_ts_;
}

}  // namespace megaagent
