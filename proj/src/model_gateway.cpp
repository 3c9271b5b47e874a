// SPDX-License-Identifier: Apache-2.0
#include "megaagent/model_gateway.hpp"

#include <fstream>
#include <thread>

#include <fmt/format.h>

#include <httplib.h>

#include "megaagent/error.hpp"
#include "megaagent/text_util.hpp"

namespace megaagent {

std::string ChatRequest::key() const { return conversation.empty() ? agent_name : agent_name + "#" + conversation; }

std::size_t count_tokens(std::string_view text) { return text::split_whitespace(text).size(); }

TokenUsage estimate_usage(const ChatRequest& request, std::string_view response_text) {
  std::size_t input = count_tokens(request.system_prompt);
  for (const auto& m : request.context_messages) input += count_tokens(m.text);
  return TokenUsage{input, count_tokens(response_text)};
}

std::string protocol_instructions(const std::vector<ToolSchema>& schemas) {
  std::string out;
  out += "You can call functions. To call one, emit a block on its own lines:\n";
  out += "```call\n{\"name\": \"<function>\", \"arguments\": {\"<param>\": \"<value>\"}}\n```\n";
  out += "Every argument is a string. You may emit several blocks; their results are returned to you.\n";
  out += "To message another agent, write <talk to=\"Name\">your message</talk>.\n";
  out += "Keep your TODO list in todo_<yourname>.txt, one numbered item per line; append [done] to finished items.\n";
  out += "Call TERMINATE only when every item on your TODO list is done.\n";
  out += "Available functions:\n";
  out += schemas_json(schemas).dump(2);
  out += "\n";
  return out;
}

// ---------------------------------------------------------------------------

const std::string& ScriptedScenario::lookup(const std::string& key, std::size_t index) const {
  auto it = steps.find({key, index});
  return it == steps.end() ? default_response : it->second;
}

void ScriptedScenario::add(std::string key, std::size_t index, std::string response) {
  steps[{std::move(key), index}] = std::move(response);
}

nlohmann::json ScriptedScenario::to_json() const {
  nlohmann::json j;
  j["default"] = default_response;
  j["steps"] = nlohmann::json::array();
  for (const auto& [k, response] : steps)
    j["steps"].push_back({{"agent", k.first}, {"index", k.second}, {"response", response}});
  return j;
}

ScriptedScenario ScriptedScenario::from_json(const nlohmann::json& j) {
  ScriptedScenario s;
  try {
    s.default_response = j.value("default", std::string{});
    for (const auto& step : j.value("steps", nlohmann::json::array())) {
      auto index = step.at("index").get<long long>();
      if (index < 0) throw Error(ErrorCode::InvalidConfig, "scenario step index must be non-negative");
      s.add(step.at("agent").get<std::string>(), static_cast<std::size_t>(index),
            step.at("response").get<std::string>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, std::string("malformed scenario: ") + e.what());
  }
  return s;
}

ScriptedScenario ScriptedScenario::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::InvalidConfig, "cannot read scenario " + path.string());
  auto j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw Error(ErrorCode::InvalidConfig, "scenario is not valid JSON: " + path.string());
  return from_json(j);
}

void ScriptedScenario::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  out << to_json().dump(2) << '\n';
}

ScriptedBackend::ScriptedBackend(ScriptedScenario scenario, std::chrono::milliseconds latency)
    : scenario_(std::move(scenario)), latency_(latency) {}

BackendReply ScriptedBackend::complete(const ChatRequest& request) {
  std::size_t index;
  {
    std::lock_guard lock(mutex_);
    index = counters_[request.key()]++;
  }
  if (latency_.count() > 0) std::this_thread::sleep_for(latency_);
  return BackendReply{scenario_.lookup(request.key(), index), std::nullopt};
}

std::size_t ScriptedBackend::calls_for(const std::string& key) const {
  std::lock_guard lock(mutex_);
  auto it = counters_.find(key);
  return it == counters_.end() ? 0 : it->second;
}

// ---------------------------------------------------------------------------

HttpBackend::HttpBackend(HttpBackendConfig config) : config_(std::move(config)) {
  const std::string& url = config_.endpoint;
  auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw Error(ErrorCode::InvalidConfig, "endpoint needs a scheme: " + url);
  auto path_start = url.find('/', scheme_end + 3);
  origin_ = url.substr(0, path_start);
  path_ = path_start == std::string::npos ? "/" : url.substr(path_start);
}

nlohmann::json HttpBackend::build_body(const ChatRequest& request) const {
  nlohmann::json messages = nlohmann::json::array();
  std::string system = request.system_prompt;
  if (!request.tool_schemas.empty()) system += "\n\n" + protocol_instructions(request.tool_schemas);
  messages.push_back({{"role", "system"}, {"content", system}});
  for (const auto& m : request.context_messages) {
    if (m.speaker == request.agent_name)
      messages.push_back({{"role", "assistant"}, {"content", m.text}});
    else
      messages.push_back({{"role", "user"}, {"content", m.speaker + ": " + m.text}});
  }
  return {{"model", config_.model}, {"messages", messages}, {"temperature", request.temperature}};
}

BackendReply HttpBackend::parse_reply(const nlohmann::json& body) {
  BackendReply reply;
  const auto& message = body.at("choices").at(0).at("message");
  if (message.contains("content") && message["content"].is_string()) reply.text = message["content"].get<std::string>();
  if (body.contains("usage") && body["usage"].is_object()) {
    const auto& u = body["usage"];
    reply.usage = TokenUsage{u.value("prompt_tokens", std::uint64_t{0}), u.value("completion_tokens", std::uint64_t{0})};
  }
  return reply;
}

BackendReply HttpBackend::complete(const ChatRequest& request) {
  const std::string payload = build_body(request).dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);
  httplib::Headers headers{{"Authorization", "Bearer " + config_.api_key}};
  std::string last_error;
  auto backoff = config_.initial_backoff;
  for (int attempt = 1; attempt <= config_.max_attempts; ++attempt) {
    httplib::Client client(origin_);
    client.set_connection_timeout(config_.timeout);
    client.set_read_timeout(config_.timeout);
    client.set_write_timeout(config_.timeout);
    auto res = client.Post(path_, headers, payload, "application/json");
    if (!res) {
      last_error = "transport error: " + httplib::to_string(res.error());
    } else if (res->status >= 200 && res->status < 300) {
      auto body = nlohmann::json::parse(res->body, nullptr, false);
      try {
        if (!body.is_discarded()) return parse_reply(body);
      } catch (const nlohmann::json::exception&) {
      }
      last_error = "unparseable completion body";
    } else {
      last_error = fmt::format("HTTP status {}", res->status);
      if (res->status >= 400 && res->status < 500 && res->status != 429) break;
    }
    if (attempt < config_.max_attempts) {
      std::this_thread::sleep_for(backoff);
      backoff *= 2;
    }
  }
  throw Error(ErrorCode::BackendUnavailable, last_error);
}

// ---------------------------------------------------------------------------

ModelGateway::ModelGateway(ModelBackend& backend, UsageLedger& ledger, EventLog* log)
    : backend_(backend), ledger_(ledger), log_(log) {}

ModelResponse ModelGateway::complete(const ChatRequest& request) {
  auto stage = ledger_.current_stage();
  if (!stage) throw Error(ErrorCode::StageClosed, "no stage window is open");
  const double started = ledger_.now();
  BackendReply reply = backend_.complete(request);
  const double duration = ledger_.now() - started;

  ModelResponse response;
  response.text = std::move(reply.text);
  response.usage = reply.usage.value_or(estimate_usage(request, response.text));
  auto parsed = parse_calls(response.text, request.tool_schemas.empty() ? registry_schemas() : request.tool_schemas);
  response.parsed_calls = std::move(parsed.calls);
  response.warnings = std::move(parsed.warnings);

  ledger_.record(request.agent_name, *stage, response.usage, started, duration);
  std::size_t index;
  {
    std::lock_guard lock(mutex_);
    index = counters_[request.key()]++;
    transcript_.push_back({request.key(), index, response.text, response.usage, *stage});
  }
  if (log_) {
    log_->append(request.agent_name, "llm_call",
                 {{"conversation", request.conversation},
                  {"index", index},
                  {"stage", to_string(*stage)},
                  {"input_tokens", response.usage.input_tokens},
                  {"output_tokens", response.usage.output_tokens},
                  {"started", started},
                  {"duration", duration},
                  {"calls", response.parsed_calls.size()}});
  }
  return response;
}

std::vector<TranscriptEntry> ModelGateway::transcript() const {
  std::lock_guard lock(mutex_);
  return transcript_;
}

std::size_t ModelGateway::calls_for(const std::string& key) const {
  std::lock_guard lock(mutex_);
  auto it = counters_.find(key);
  return it == counters_.end() ? 0 : it->second;
}

std::size_t ModelGateway::total_calls() const {
  std::lock_guard lock(mutex_);
  return transcript_.size();
}

}  // namespace megaagent
