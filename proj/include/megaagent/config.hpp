// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>

#include <json.hpp>

#include "megaagent/model_gateway.hpp"
#include "megaagent/orchestrator.hpp"

namespace megaagent {

enum class BackendKind { Scripted, Http };
std::optional<BackendKind> parse_backend_kind(std::string_view text);

struct FileConfig {
  RunConfig run;
  HttpBackendConfig http;
  std::optional<BackendKind> backend;
  std::optional<std::filesystem::path> scenario_path;
  std::optional<std::filesystem::path> meta_path;
  std::optional<std::filesystem::path> workspace_dir;
  /// Injected scripted-backend latency, for timing experiments.
  std::chrono::milliseconds scripted_latency{0};
};

/// Defaults for deterministic scripted runs (50 ms polling, 30 s deadlock).
RunConfig scripted_profile();
/// Defaults for live model runs (1 s polling, 300 s deadlock).
RunConfig live_profile();

/// Overlays `j` onto `base`. Unknown keys and out-of-range values throw
/// InvalidConfig. Durations are given in seconds (`*_s`) or ms (`*_ms`).
FileConfig parse_config(const nlohmann::json& j, FileConfig base);
FileConfig load_config(const std::filesystem::path& path, FileConfig base);

/// Applies environment overrides; MEGA_API_KEY replaces the HTTP key.
void apply_environment(FileConfig& config, const std::function<const char*(const char*)>& getenv_fn);

}  // namespace megaagent
