// SPDX-License-Identifier: Apache-2.0
#include "megaagent/tool_schema.hpp"

#include <algorithm>

#include <fmt/format.h>

#include "megaagent/text_util.hpp"

namespace megaagent {

nlohmann::ordered_json ToolSchema::to_json() const {
  nlohmann::ordered_json j;
  j["name"] = name;
  j["description"] = description;
  if (!parameters.empty()) {
    nlohmann::ordered_json props = nlohmann::ordered_json::object();
    for (const auto& p : parameters) {
      nlohmann::ordered_json prop;
      prop["type"] = p.type;
      prop["description"] = p.description;
      props[p.name] = prop;
    }
    j["parameters"]["type"] = "object";
    j["parameters"]["properties"] = props;
  }
  return j;
}

ToolSchema ToolSchema::from_json(const nlohmann::ordered_json& j) {
  ToolSchema s;
  s.name = j.at("name").get<std::string>();
  s.description = j.at("description").get<std::string>();
  if (j.contains("parameters")) {
    for (const auto& [key, prop] : j.at("parameters").at("properties").items())
      s.parameters.push_back({key, prop.at("type").get<std::string>(), prop.at("description").get<std::string>()});
  }
  return s;
}

const std::vector<ToolSchema>& registry_schemas() {
  static const std::vector<ToolSchema> schemas{
      {std::string(tool_names::kExecPythonFile),
       "Execute a Python file and get the result.",
       {{"filename", "string", "The filename of the Python file to be executed."}}},
      {std::string(tool_names::kReadFile),
       "Read the content of a file.",
       {{"filename", "string", "The filename to be read."}}},
      {std::string(tool_names::kInput),
       "Input a string to the running Python code.",
       {{"content", "string", "The string to be input."}}},
      {std::string(tool_names::kWriteFile),
       "Write content to a file.",
       {{"filename", "string", "The filename to be written."}, {"content", "string", "The content to be written."}}},
      {std::string(tool_names::kAddAgent),
       "Recruit an agent as your subordinate.",
       {{"name", "string", "Unique agent name."}, {"description", "string", "Agent description."}}},
      {std::string(tool_names::kTerminate), "End the conversation when all tasks are complete.", {}},
  };
  return schemas;
}

const ToolSchema* find_schema(std::span<const ToolSchema> schemas, std::string_view name) {
  auto it = std::find_if(schemas.begin(), schemas.end(), [&](const ToolSchema& s) { return s.name == name; });
  return it == schemas.end() ? nullptr : &*it;
}

nlohmann::ordered_json schemas_json(std::span<const ToolSchema> schemas) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const auto& s : schemas) arr.push_back(s.to_json());
  return arr;
}

std::string FunctionCall::arg(const std::string& key) const {
  auto it = arguments.find(key);
  return it == arguments.end() ? std::string{} : it->second;
}

ToolObservation ToolObservation::ok(std::string tool, std::string output) {
  return ToolObservation{std::move(tool), true, std::move(output), std::nullopt};
}

ToolObservation ToolObservation::fail(std::string tool, std::string detail, std::string output) {
  return ToolObservation{std::move(tool), false, std::move(output), std::move(detail)};
}

namespace {

// Validates one call body against the schema set; returns the reason on failure.
std::optional<std::string> decode_body(std::string_view body, std::span<const ToolSchema> schemas,
                                       FunctionCall& out) {
  auto j = nlohmann::json::parse(body, nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded()) return "call body is not valid JSON";
  if (!j.is_object()) return "call body must be a JSON object";
  if (!j.contains("name") || !j["name"].is_string()) return "call is missing a string \"name\"";
  out.tool_name = j["name"].get<std::string>();
  const ToolSchema* schema = find_schema(schemas, out.tool_name);
  if (!schema) return fmt::format("unknown tool \"{}\"", out.tool_name);

  nlohmann::json args = j.value("arguments", nlohmann::json::object());
  if (!args.is_object()) return "\"arguments\" must be an object";
  for (const auto& p : schema->parameters) {
    if (!args.contains(p.name)) return fmt::format("missing required argument \"{}\"", p.name);
    if (!args[p.name].is_string()) return fmt::format("argument \"{}\" must be a string", p.name);
    out.arguments[p.name] = args[p.name].get<std::string>();
  }
  return std::nullopt;
}

}  // namespace

ParsedCalls parse_calls(std::string_view response_text, std::span<const ToolSchema> schemas) {
  ParsedCalls result;
  auto lines = text::split_lines(response_text);
  std::size_t block = 0;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (text::trim(lines[i]) != kCallFenceOpen) continue;
    std::size_t open_line = i + 1;
    std::size_t close = i + 1;
    while (close < lines.size() && text::trim(lines[close]) != kFence) ++close;
    if (close == lines.size()) {
      result.warnings.push_back({block, open_line, "unterminated call block"});
      break;
    }
    std::string body;
    for (std::size_t k = i + 1; k < close; ++k) {
      body.append(lines[k]);
      body.push_back('\n');
    }
    FunctionCall call;
    if (auto reason = decode_body(body, schemas, call))
      result.warnings.push_back({block, open_line, *reason});
    else
      result.calls.push_back(std::move(call));
    ++block;
    i = close;
  }
  return result;
}

ParsedCalls parse_calls(std::string_view response_text) { return parse_calls(response_text, registry_schemas()); }

std::string format_call(const FunctionCall& call) {
  nlohmann::ordered_json j;
  j["name"] = call.tool_name;
  if (!call.arguments.empty()) {
    nlohmann::ordered_json args = nlohmann::ordered_json::object();
    for (const auto& [k, v] : call.arguments) args[k] = v;
    j["arguments"] = args;
  }
  return fmt::format("{}\n{}\n{}\n", kCallFenceOpen,
                     j.dump(-1, ' ', false, nlohmann::ordered_json::error_handler_t::replace), kFence);
}

}  // namespace megaagent
