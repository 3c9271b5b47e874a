// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "megaagent/event_log.hpp"
#include "megaagent/metrics.hpp"
#include "megaagent/tool_schema.hpp"

namespace megaagent {

struct ContextMessage {
  std::string speaker;
  std::string text;
  friend bool operator==(const ContextMessage&, const ContextMessage&) = default;
};

struct ChatRequest {
  std::string agent_name;
  /// Secondary conversation of the same agent (e.g. "review"); empty for the
  /// agent's main message loop. Scripted steps are keyed by `key()`.
  std::string conversation;
  std::string system_prompt;
  std::vector<ContextMessage> context_messages;
  std::vector<ToolSchema> tool_schemas;
  double temperature = 0.0;

  /// "agent" for the main loop, "agent#conversation" otherwise.
  std::string key() const;
};

struct ModelResponse {
  std::string text;
  std::vector<FunctionCall> parsed_calls;
  std::vector<ParseWarning> warnings;
  TokenUsage usage;
};

/// What a backend hands back; `usage` is set when the provider reports it.
struct BackendReply {
  std::string text;
  std::optional<TokenUsage> usage;
};

class ModelBackend {
 public:
  virtual ~ModelBackend() = default;
  virtual BackendReply complete(const ChatRequest& request) = 0;
  virtual bool deterministic() const { return false; }
};

/// Whitespace-delimited token count used when a backend reports no usage.
std::size_t count_tokens(std::string_view text);
TokenUsage estimate_usage(const ChatRequest& request, std::string_view response_text);

/// Instructions appended to the system prompt for live models: the call block
/// syntax, the talk syntax for messaging other agents, and the tool schemas.
std::string protocol_instructions(const std::vector<ToolSchema>& schemas);

// ---------------------------------------------------------------------------
// Scripted backend

struct ScriptedScenario {
  std::map<std::pair<std::string, std::size_t>, std::string> steps;
  std::string default_response;

  /// Total: unmapped (key, index) pairs resolve to the default response.
  const std::string& lookup(const std::string& key, std::size_t index) const;
  void add(std::string key, std::size_t index, std::string response);

  nlohmann::json to_json() const;
  static ScriptedScenario from_json(const nlohmann::json& j);
  static ScriptedScenario load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
};

class ScriptedBackend final : public ModelBackend {
 public:
  explicit ScriptedBackend(ScriptedScenario scenario,
                           std::chrono::milliseconds latency = std::chrono::milliseconds{0});

  BackendReply complete(const ChatRequest& request) override;
  bool deterministic() const override { return true; }

  std::size_t calls_for(const std::string& key) const;
  const ScriptedScenario& scenario() const { return scenario_; }

 private:
  ScriptedScenario scenario_;
  std::chrono::milliseconds latency_;
  mutable std::mutex mutex_;
  std::map<std::string, std::size_t> counters_;
};

// ---------------------------------------------------------------------------
// HTTP chat-completion backend

struct HttpBackendConfig {
  std::string endpoint = "https://api.openai.com/v1/chat/completions";
  std::string model = "gpt-4o";
  std::string api_key;
  int max_attempts = 3;
  std::chrono::milliseconds initial_backoff{500};
  std::chrono::seconds timeout{120};
};

class HttpBackend final : public ModelBackend {
 public:
  explicit HttpBackend(HttpBackendConfig config);
  BackendReply complete(const ChatRequest& request) override;

  /// Request body for the standard chat-completion POST.
  nlohmann::json build_body(const ChatRequest& request) const;
  static BackendReply parse_reply(const nlohmann::json& body);

 private:
  HttpBackendConfig config_;
  std::string origin_;  // scheme://host[:port]
  std::string path_;
};

// ---------------------------------------------------------------------------

struct TranscriptEntry {
  std::string key;
  std::size_t index = 0;
  std::string response;
  TokenUsage usage;
  StageLabel stage = StageLabel::Planning;
};

/// Front door for every model call: attributes the call to the stage open at
/// call start, records exactly one ledger entry and one `llm_call` event, and
/// parses function calls out of the reply.
class ModelGateway {
 public:
  ModelGateway(ModelBackend& backend, UsageLedger& ledger, EventLog* log = nullptr);

  ModelResponse complete(const ChatRequest& request);

  std::vector<TranscriptEntry> transcript() const;
  std::size_t calls_for(const std::string& key) const;
  std::size_t total_calls() const;
  bool deterministic() const { return backend_.deterministic(); }

 private:
  ModelBackend& backend_;
  UsageLedger& ledger_;
  EventLog* log_;
  mutable std::mutex mutex_;
  std::map<std::string, std::size_t> counters_;
  std::vector<TranscriptEntry> transcript_;
};

}  // namespace megaagent
