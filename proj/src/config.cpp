// SPDX-License-Identifier: Apache-2.0
#include "megaagent/config.hpp"

#include <fstream>
#include <set>

#include "megaagent/error.hpp"

namespace megaagent {

using nlohmann::json;

std::optional<BackendKind> parse_backend_kind(std::string_view text) {
  if (text == "scripted") return BackendKind::Scripted;
  if (text == "http") return BackendKind::Http;
  return std::nullopt;
}

RunConfig scripted_profile() { return RunConfig{}; }

RunConfig live_profile() {
  RunConfig c;
  c.runtime.poll_interval = std::chrono::milliseconds{1000};
  c.orchestrator.deadlock_timeout = std::chrono::milliseconds{300'000};
  return c;
}

namespace {

[[noreturn]] void bad(const std::string& what) { throw Error(ErrorCode::InvalidConfig, what); }

void check_keys(const json& j, const std::string& section, const std::set<std::string>& allowed) {
  if (!j.is_object()) bad(section + " must be an object");
  for (const auto& [k, _] : j.items())
    if (!allowed.count(k)) bad("unknown key \"" + k + "\" in " + section);
}

template <typename T>
T get(const json& j, const char* key, const std::string& section) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    bad("bad value for " + section + "." + key);
  }
}

std::size_t positive(const json& j, const char* key, const std::string& section) {
  auto v = get<long long>(j, key, section);
  if (v <= 0) bad(section + "." + key + " must be positive");
  return static_cast<std::size_t>(v);
}

std::chrono::milliseconds duration(const json& j, const std::string& stem, const std::string& section,
                                   std::chrono::milliseconds current) {
  const std::string s = stem + "_s", ms = stem + "_ms";
  if (j.contains(s)) {
    auto v = get<double>(j, s.c_str(), section);
    if (v <= 0) bad(section + "." + s + " must be positive");
    return std::chrono::milliseconds{static_cast<long long>(v * 1000.0)};
  }
  if (j.contains(ms)) return std::chrono::milliseconds{positive(j, ms.c_str(), section)};
  return current;
}

}  // namespace

FileConfig parse_config(const json& j, FileConfig c) {
  check_keys(j, "config",
             {"backend", "scenario", "meta", "workspace", "runtime", "sandbox", "supervisor", "orchestrator", "http",
              "scripted_latency_ms"});
  if (j.contains("backend")) {
    auto kind = parse_backend_kind(get<std::string>(j, "backend", "config"));
    if (!kind) bad("backend must be \"scripted\" or \"http\"");
    c.backend = kind;
  }
  if (j.contains("scenario")) c.scenario_path = get<std::string>(j, "scenario", "config");
  if (j.contains("meta")) c.meta_path = get<std::string>(j, "meta", "config");
  if (j.contains("workspace")) c.workspace_dir = get<std::string>(j, "workspace", "config");
  if (j.contains("scripted_latency_ms"))
    c.scripted_latency = std::chrono::milliseconds{get<long long>(j, "scripted_latency_ms", "config")};

  if (j.contains("runtime")) {
    const auto& r = j["runtime"];
    check_keys(r, "runtime",
               {"poll_interval_s", "poll_interval_ms", "max_function_call_iterations", "max_agents",
                "max_hierarchy_depth", "serial", "temperature", "n_relevant", "k_latest"});
    auto& rc = c.run.runtime;
    rc.poll_interval = duration(r, "poll_interval", "runtime", rc.poll_interval);
    if (r.contains("max_function_call_iterations"))
      rc.max_function_call_iterations = positive(r, "max_function_call_iterations", "runtime");
    if (r.contains("max_agents")) rc.max_agents = positive(r, "max_agents", "runtime");
    if (r.contains("max_hierarchy_depth")) rc.max_hierarchy_depth = positive(r, "max_hierarchy_depth", "runtime");
    if (r.contains("serial")) rc.serial = get<bool>(r, "serial", "runtime");
    if (r.contains("temperature")) rc.temperature = get<double>(r, "temperature", "runtime");
    if (r.contains("n_relevant")) rc.retrieval.n_relevant = get<std::size_t>(r, "n_relevant", "runtime");
    if (r.contains("k_latest")) rc.retrieval.k_latest = get<std::size_t>(r, "k_latest", "runtime");
  }
  if (j.contains("sandbox")) {
    const auto& s = j["sandbox"];
    check_keys(s, "sandbox",
               {"timeout_s", "timeout_ms", "idle_return_s", "idle_return_ms", "allowed_extensions",
                "interpreter_path", "system_read_paths", "max_output_bytes", "confine"});
    auto& sp = c.run.sandbox;
    sp.timeout = duration(s, "timeout", "sandbox", sp.timeout);
    sp.idle_return = duration(s, "idle_return", "sandbox", sp.idle_return);
    if (s.contains("allowed_extensions"))
      sp.allowed_extensions = get<std::vector<std::string>>(s, "allowed_extensions", "sandbox");
    if (s.contains("interpreter_path")) sp.interpreter_path = get<std::string>(s, "interpreter_path", "sandbox");
    if (s.contains("system_read_paths")) {
      sp.system_read_paths.clear();
      for (const auto& p : get<std::vector<std::string>>(s, "system_read_paths", "sandbox"))
        sp.system_read_paths.emplace_back(p);
    }
    if (s.contains("max_output_bytes")) sp.max_output_bytes = positive(s, "max_output_bytes", "sandbox");
    if (s.contains("confine")) sp.confine = get<bool>(s, "confine", "sandbox");
  }
  if (j.contains("supervisor")) {
    const auto& s = j["supervisor"];
    check_keys(s, "supervisor",
               {"retry_budget", "repetition_threshold", "window_cycles", "refusal_patterns", "verify_executables",
                "review_retries"});
    auto& sc = c.run.supervisor;
    if (s.contains("retry_budget")) sc.retry_budget = get<std::size_t>(s, "retry_budget", "supervisor");
    if (s.contains("repetition_threshold"))
      sc.repetition_threshold = positive(s, "repetition_threshold", "supervisor");
    if (s.contains("window_cycles")) sc.window_cycles = positive(s, "window_cycles", "supervisor");
    if (s.contains("refusal_patterns"))
      sc.refusal_patterns = get<std::vector<std::string>>(s, "refusal_patterns", "supervisor");
    if (s.contains("verify_executables")) sc.verify_executables = get<bool>(s, "verify_executables", "supervisor");
    if (s.contains("review_retries")) sc.review_retries = get<std::size_t>(s, "review_retries", "supervisor");
  }
  if (j.contains("orchestrator")) {
    const auto& o = j["orchestrator"];
    check_keys(o, "orchestrator",
               {"boss_name", "deadlock_timeout_s", "deadlock_timeout_ms", "initial_checklist", "model_summary"});
    auto& oc = c.run.orchestrator;
    if (o.contains("boss_name")) oc.boss_name = get<std::string>(o, "boss_name", "orchestrator");
    oc.deadlock_timeout = duration(o, "deadlock_timeout", "orchestrator", oc.deadlock_timeout);
    if (o.contains("initial_checklist"))
      oc.initial_checklist = get<std::vector<std::string>>(o, "initial_checklist", "orchestrator");
    if (o.contains("model_summary")) oc.model_summary = get<bool>(o, "model_summary", "orchestrator");
  }
  if (j.contains("http")) {
    const auto& h = j["http"];
    check_keys(h, "http",
               {"endpoint", "model", "api_key", "max_attempts", "initial_backoff_ms", "timeout_s"});
    auto& hc = c.http;
    if (h.contains("endpoint")) hc.endpoint = get<std::string>(h, "endpoint", "http");
    if (h.contains("model")) hc.model = get<std::string>(h, "model", "http");
    if (h.contains("api_key")) hc.api_key = get<std::string>(h, "api_key", "http");
    if (h.contains("max_attempts")) hc.max_attempts = static_cast<int>(positive(h, "max_attempts", "http"));
    if (h.contains("initial_backoff_ms"))
      hc.initial_backoff = std::chrono::milliseconds{get<long long>(h, "initial_backoff_ms", "http")};
    if (h.contains("timeout_s")) hc.timeout = std::chrono::seconds{positive(h, "timeout_s", "http")};
  }
  return c;
}

FileConfig load_config(const std::filesystem::path& path, FileConfig base) {
  std::ifstream in(path);
  if (!in) bad("cannot read " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    bad(path.string() + ": " + e.what());
  }
  return parse_config(j, std::move(base));
}

void apply_environment(FileConfig& config, const std::function<const char*(const char*)>& getenv_fn) {
  if (const char* key = getenv_fn("MEGA_API_KEY"); key && *key) config.http.api_key = key;
}

}  // namespace megaagent
