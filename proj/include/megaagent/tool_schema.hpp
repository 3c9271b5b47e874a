// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace megaagent {

struct ToolParameter {
  std::string name;
  std::string type = "string";
  std::string description;
  friend bool operator==(const ToolParameter&, const ToolParameter&) = default;
};

struct ToolSchema {
  std::string name;
  std::string description;
  std::vector<ToolParameter> parameters;  // every listed parameter is required

  /// Serialises in the key order of the published function-call listing:
  /// name, description, then parameters{type, properties} (omitted when empty).
  nlohmann::ordered_json to_json() const;
  static ToolSchema from_json(const nlohmann::ordered_json& j);
  friend bool operator==(const ToolSchema&, const ToolSchema&) = default;
};

namespace tool_names {
inline constexpr std::string_view kExecPythonFile = "exec_python_file";
inline constexpr std::string_view kReadFile = "read_file";
inline constexpr std::string_view kInput = "input";
inline constexpr std::string_view kWriteFile = "write_file";
inline constexpr std::string_view kAddAgent = "add_agent";
inline constexpr std::string_view kTerminate = "TERMINATE";
}  // namespace tool_names

/// The six built-in schemas, in listing order.
const std::vector<ToolSchema>& registry_schemas();
const ToolSchema* find_schema(std::span<const ToolSchema> schemas, std::string_view name);
nlohmann::ordered_json schemas_json(std::span<const ToolSchema> schemas);

struct FunctionCall {
  std::string tool_name;
  std::map<std::string, std::string> arguments;

  std::string arg(const std::string& key) const;
  friend bool operator==(const FunctionCall&, const FunctionCall&) = default;
};

struct ToolObservation {
  std::string tool_name;
  bool success = true;
  std::string output;
  std::optional<std::string> error_detail;  // present iff !success

  static ToolObservation ok(std::string tool, std::string output);
  static ToolObservation fail(std::string tool, std::string detail, std::string output = {});
};

struct ParseWarning {
  std::size_t block = 0;  // zero-based index among call blocks
  std::size_t line = 0;   // one-based line of the opening fence
  std::string reason;
};

struct ParsedCalls {
  std::vector<FunctionCall> calls;
  std::vector<ParseWarning> warnings;

  bool has_calls() const { return !calls.empty(); }
};

/// Canonical call encoding: a fenced block whose info string is `call` and
/// whose body is one JSON object, e.g.
///
///     ```call
///     {"name": "write_file", "arguments": {"filename": "a.txt", "content": "x"}}
///     ```
///
/// Fence lines must match exactly once surrounding whitespace is trimmed. JSON
/// strings cannot hold a raw newline, so a closing fence can never occur
/// inside a well-formed body.
inline constexpr std::string_view kCallFenceOpen = "```call";
inline constexpr std::string_view kFence = "```";

ParsedCalls parse_calls(std::string_view response_text, std::span<const ToolSchema> schemas);
ParsedCalls parse_calls(std::string_view response_text);

std::string format_call(const FunctionCall& call);

}  // namespace megaagent
