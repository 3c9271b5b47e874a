// SPDX-License-Identifier: Apache-2.0
#include "megaagent/supervisor.hpp"

#include <algorithm>
#include <cctype>

#include <fmt/core.h>

#include "megaagent/error.hpp"
#include "megaagent/text_util.hpp"

namespace megaagent {

using nlohmann::json;

std::string_view to_string(FailureKind kind) {
  switch (kind) {
    case FailureKind::IncompleteTodo: return "IncompleteTodo";
    case FailureKind::Repetition: return "Repetition";
    case FailureKind::Refusal: return "Refusal";
    case FailureKind::FormatError: return "FormatError";
    case FailureKind::ExecError: return "ExecError";
  }
  return "FormatError";
}

std::string_view to_string(RemediationKind kind) {
  switch (kind) {
    case RemediationKind::RetryPrompt: return "RetryPrompt";
    case RemediationKind::RecruitReplacement: return "RecruitReplacement";
    case RemediationKind::EscalateToParent: return "EscalateToParent";
  }
  return "RetryPrompt";
}

std::optional<FailureKind> parse_failure_kind(std::string_view text) {
  for (auto k : {FailureKind::IncompleteTodo, FailureKind::Repetition, FailureKind::Refusal, FailureKind::FormatError,
                 FailureKind::ExecError})
    if (to_string(k) == text) return k;
  return std::nullopt;
}

std::string_view to_string(ReviewVerdict verdict) {
  switch (verdict) {
    case ReviewVerdict::Accepted: return "ACCEPT";
    case ReviewVerdict::Revise: return "REVISE";
    case ReviewVerdict::Inconclusive: return "INCONCLUSIVE";
  }
  return "INCONCLUSIVE";
}

// ---- checklists ------------------------------------------------------------

namespace {

constexpr std::string_view kDoneMarker = "[done]";

// Strips "1. ", "12) ", "- " or "* " from the front of a line.
std::string_view strip_bullet(std::string_view line) {
  if (!line.empty() && (line[0] == '-' || line[0] == '*')) return text::trim(line.substr(1));
  std::size_t i = 0;
  while (i < line.size() && std::isdigit(static_cast<unsigned char>(line[i]))) ++i;
  if (i > 0 && i < line.size() && (line[i] == '.' || line[i] == ')')) return text::trim(line.substr(i + 1));
  return line;
}

}  // namespace

std::string Checklist::storage_path(std::string_view owner) { return "todo_" + std::string(owner) + ".txt"; }

bool Checklist::is_storage_path(std::string_view path) {
  return path.size() > 9 && path.starts_with("todo_") && path.ends_with(".txt") && path.find('/') == std::string_view::npos;
}

Checklist Checklist::parse(std::string owner, std::string_view content) {
  Checklist c;
  c.owner = std::move(owner);
  for (auto raw : text::split_lines(content)) {
    auto line = text::trim(raw);
    if (line.empty() || line.starts_with('#')) continue;
    std::string body(strip_bullet(line));
    ChecklistItem item;
    std::string lowered = text::to_lower(body);
    if (auto pos = lowered.find(kDoneMarker); pos != std::string::npos) {
      item.done = true;
      body.erase(pos, kDoneMarker.size());
    }
    item.text = std::string(text::trim(body));
    if (item.text.empty()) continue;
    c.items.push_back(std::move(item));
  }
  return c;
}

std::string Checklist::render() const {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    out += fmt::format("{}. {}", i + 1, items[i].text);
    if (items[i].done) out += " [done]";
    out += '\n';
  }
  return out;
}

bool Checklist::complete() const {
  return std::all_of(items.begin(), items.end(), [](const auto& i) { return i.done; });
}

std::vector<std::string> Checklist::open_items() const {
  std::vector<std::string> out;
  for (const auto& i : items)
    if (!i.done) out.push_back(i.text);
  return out;
}

// ---- detection -------------------------------------------------------------

std::vector<Failure> detect_failures(std::span<const CycleTrace> window, const SupervisorConfig& config,
                                     const std::optional<Checklist>& checklist) {
  std::vector<Failure> out;
  if (window.empty()) return out;
  const CycleTrace& last = window.back();

  for (const auto& pattern : config.refusal_patterns) {
    if (!pattern.empty() && text::contains_icase(last.final_text, pattern)) {
      out.push_back({FailureKind::Refusal, "response declined the task: \"" +
                                               std::string(text::trim(last.final_text)).substr(0, 200) + "\""});
      break;
    }
  }

  if (last.terminate_attempted && !last.terminated) {
    std::string open = checklist ? text::join(checklist->open_items(), "; ") : std::string();
    out.push_back({FailureKind::IncompleteTodo, "TERMINATE was called while the TODO list still has open items: " +
                                                    (open.empty() ? std::string("(unknown)") : open)});
  }

  const std::size_t r = config.repetition_threshold;
  if (r >= 2) {
    // Consecutive identical calls, counted across cycle boundaries. The run
    // must reach into the latest cycle to count as a new detection.
    std::vector<const FunctionCall*> calls;
    std::size_t last_cycle_start = 0;
    for (std::size_t c = 0; c < window.size(); ++c) {
      if (c + 1 == window.size()) last_cycle_start = calls.size();
      for (const auto& [call, _] : window[c].calls)
        if (call.tool_name != tool_names::kTerminate) calls.push_back(&call);
    }
    std::size_t run = 0;
    for (std::size_t i = 0; i < calls.size(); ++i) {
      run = (i > 0 && *calls[i] == *calls[i - 1]) ? run + 1 : 1;
      if (run >= r && i >= last_cycle_start) {
        out.push_back({FailureKind::Repetition,
                       fmt::format("the same {} call was issued {} times in a row", calls[i]->tool_name, run)});
        break;
      }
    }
    bool repeated_text = false;
    if (out.empty() || out.back().kind != FailureKind::Repetition) {
      if (window.size() >= r && !text::trim(last.final_text).empty()) {
        repeated_text = true;
        for (std::size_t k = window.size() - r; k + 1 < window.size(); ++k)
          if (window[k].final_text != last.final_text) repeated_text = false;
      }
    }
    if (repeated_text)
      out.push_back({FailureKind::Repetition, fmt::format("the same response was given {} times in a row", r)});
  }
  return out;
}

ParsedReview parse_review(std::string_view response, const std::set<std::string>& members) {
  ParsedReview out;
  auto lines = text::split_lines(text::trim(response));
  if (lines.empty()) return out;
  auto first = text::trim(lines[0]);
  if (text::starts_with_icase(first, "ACCEPT")) {
    out.verdict = ReviewVerdict::Accepted;
    return out;
  }
  if (!text::starts_with_icase(first, "REVISE:")) return out;

  std::vector<std::string_view> body;
  auto rest = text::trim(first.substr(7));
  if (!rest.empty()) body.push_back(rest);
  for (std::size_t i = 1; i < lines.size(); ++i) body.push_back(lines[i]);
  for (auto raw : body) {
    auto line = text::trim(raw);
    if (line.starts_with("- ") || line.starts_with("* ")) line = text::trim(line.substr(2));
    auto colon = line.find(':');
    if (colon == std::string_view::npos) continue;
    std::string name(text::trim(line.substr(0, colon)));
    std::string what(text::trim(line.substr(colon + 1)));
    if (what.empty() || !members.count(name)) continue;
    out.deficiencies.push_back({std::move(name), std::move(what)});
  }
  if (!out.deficiencies.empty()) out.verdict = ReviewVerdict::Revise;
  return out;
}

// ---- supervisor ------------------------------------------------------------

Supervisor::Supervisor(Runtime& runtime, Workspace& workspace, ModelGateway& gateway, SupervisorConfig config,
                       SandboxPolicy sandbox)
    : runtime_(runtime), workspace_(workspace), gateway_(gateway), config_(std::move(config)),
      sandbox_(std::move(sandbox)) {}

std::optional<Checklist> Supervisor::checklist(const std::string& owner) const {
  auto path = Checklist::storage_path(owner);
  if (!workspace_.exists(path)) return std::nullopt;
  return Checklist::parse(owner, workspace_.read(path).content);
}

namespace {

// Read-modify-write against the workspace until no concurrent writer
// interferes.
template <typename Mutate>
Checklist update_checklist(Workspace& ws, const std::string& owner, Mutate&& mutate) {
  const auto path = Checklist::storage_path(owner);
  for (int attempt = 0; attempt < 64; ++attempt) {
    std::optional<CommitHash> base;
    Checklist current{owner, {}};
    if (ws.exists(path)) {
      auto rec = ws.read(path);
      base = rec.head;
      current = Checklist::parse(owner, rec.content);
    }
    mutate(current);
    auto result = ws.write(path, current.render(), base);
    if (std::holds_alternative<CommitHash>(result)) return current;
  }
  throw Error(ErrorCode::InvariantViolation, "could not update " + path + " under contention");
}

}  // namespace

void Supervisor::init_checklist(const std::string& owner, const std::vector<std::string>& items) {
  std::lock_guard lock(checklist_mutex_);
  update_checklist(workspace_, owner, [&](Checklist& c) {
    c.items.clear();
    for (const auto& i : items) c.items.push_back({i, false});
  });
}

void Supervisor::add_checklist_item(const std::string& owner, const std::string& item) {
  std::lock_guard lock(checklist_mutex_);
  update_checklist(workspace_, owner, [&](Checklist& c) { c.items.push_back({item, false}); });
}

void Supervisor::copy_checklist(const std::string& from, const std::string& to) {
  auto source = checklist(from);
  std::lock_guard lock(checklist_mutex_);
  update_checklist(workspace_, to, [&](Checklist& c) { c.items = source ? source->items : std::vector<ChecklistItem>{}; });
}

std::optional<Failure> Supervisor::verify_format(const std::string& agent, const CycleTrace& trace) {
  std::optional<Failure> verdict;
  auto fail = [&](FailureKind kind, std::string detail) {
    if (!verdict) verdict = Failure{kind, std::move(detail)};
  };

  if (trace.step_error) fail(FailureKind::FormatError, "the cycle failed: " + *trace.step_error);
  if (trace.loop_exceeded)
    fail(FailureKind::IncompleteTodo,
         fmt::format("function-call loop exceeded {} inferences; nothing was sent", trace.inferences));
  for (const auto& w : trace.final_warnings) fail(FailureKind::FormatError, "malformed function call: " + w.reason);
  for (const auto& p : trace.dispatch_problems) fail(FailureKind::FormatError, "malformed message: " + p);
  for (const auto& d : trace.dispatches) {
    if (!runtime_.find(d.recipient))
      fail(FailureKind::FormatError, "unknown recipient \"" + d.recipient + "\"");
    else if (!runtime_.can_route(agent, d.recipient))
      fail(FailureKind::FormatError, agent + " may not message " + d.recipient);
  }

  // The latest run of each program decides whether it executes cleanly.
  std::map<std::string, const ToolObservation*> last_exec;
  std::set<std::string> written;
  for (const auto& [call, obs] : trace.calls) {
    if (call.tool_name == tool_names::kExecPythonFile) last_exec[call.arg("filename")] = &obs;
    if (call.tool_name == tool_names::kWriteFile && obs.success) written.insert(call.arg("filename"));
  }
  for (const auto& [file, obs] : last_exec)
    if (!obs->success)
      fail(FailureKind::FormatError, "ExecError: " + file + ": " + obs->error_detail.value_or("execution failed"));

  if (config_.verify_executables) {
    if (auto dir = workspace_.tree_dir()) {
      for (const auto& file : written) {
        if (!file.ends_with(".py") || last_exec.count(file)) continue;
        auto result = run_sandboxed(sandbox_, *dir, {sandbox_.interpreter_path.string(), file});
        if (result.status == ExecStatus::Exited && result.exit_code != 0)
          fail(FailureKind::ExecError, fmt::format("{} exits with code {}: {}", file, result.exit_code,
                                                   std::string(text::trim(result.output)).substr(0, 500)));
        else if (result.status == ExecStatus::TimedOut)
          fail(FailureKind::ExecError, file + " exceeded the execution time limit");
        else if (result.status == ExecStatus::FailedToStart)
          fail(FailureKind::ExecError, file + " could not be started: " + result.output);
      }
    }
  }

  if (text::trim(trace.final_text).empty() && trace.calls.empty() && !trace.step_error)
    fail(FailureKind::FormatError, "empty response");

  json detail{{"ok", !verdict.has_value()}};
  if (verdict) {
    detail["kind"] = to_string(verdict->kind);
    detail["detail"] = verdict->detail;
  }
  runtime_.log().append(agent, "verify", detail);
  return verdict;
}

std::vector<Failure> Supervisor::observe_cycle(const std::string& agent, const CycleTrace& trace) {
  std::vector<CycleTrace> window;
  {
    std::lock_guard lock(mutex_);
    auto& w = windows_[agent];
    w.push_back(trace);
    while (w.size() > config_.window_cycles) w.pop_front();
    window.assign(w.begin(), w.end());
  }
  auto failures = detect_failures(window, config_, checklist(agent));
  if (std::any_of(failures.begin(), failures.end(), [](const auto& f) { return f.kind == FailureKind::Repetition; })) {
    std::lock_guard lock(mutex_);
    windows_[agent].clear();
  }
  return failures;
}

void Supervisor::send(const std::string& recipient, const std::string& text) {
  try {
    runtime_.enqueue(std::string(kSupervisorSender), recipient, text);
  } catch (const Error& e) {
    runtime_.log().append(std::string(kSupervisorSender), "send_failed",
                          json{{"recipient", recipient}, {"error", e.what()}});
  }
}

void Supervisor::escalate_root(const std::string& why) {
  {
    std::lock_guard lock(mutex_);
    if (!root_escalation_) root_escalation_ = why;
  }
  runtime_.log().append(std::string(kSupervisorSender), "escalation_at_root", json{{"reason", why}});
}

std::optional<std::string> Supervisor::root_escalation() const {
  std::lock_guard lock(mutex_);
  return root_escalation_;
}

std::size_t Supervisor::attempts_used(const std::string& agent, FailureKind kind) const {
  std::lock_guard lock(mutex_);
  auto it = attempts_.find({agent, kind});
  return it == attempts_.end() ? 0 : it->second;
}

namespace {

std::string retry_guidance(FailureKind kind, const std::string& agent) {
  switch (kind) {
    case FailureKind::IncompleteTodo:
      return "Finish the open items, mark each one with [done] in " + Checklist::storage_path(agent) +
             " (read it before writing), then call TERMINATE.";
    case FailureKind::Repetition: return "You are repeating yourself without progress. Change your approach.";
    case FailureKind::ExecError: return "Fix the program and run it again.";
    case FailureKind::FormatError: return "Correct the problem and respond again.";
    case FailureKind::Refusal: return "Continue with the task.";
  }
  return {};
}

}  // namespace

RemediationAction Supervisor::remediate(const std::string& agent, const Failure& failure, const CycleTrace* trace) {
  auto& log = runtime_.log();
  log.append(agent, "failure", json{{"kind", to_string(failure.kind)}, {"detail", failure.detail}});
  const Agent who = runtime_.get(agent);
  RemediationAction action;

  auto record = [&] {
    log.append(agent, "remediation",
               json{{"action", to_string(action.kind)},
                    {"kind", to_string(failure.kind)},
                    {"attempts_remaining", action.attempts_remaining},
                    {"target", action.target}});
    return action;
  };

  if (who.retired) {
    action.kind = RemediationKind::RetryPrompt;
    return record();
  }

  if (failure.kind == FailureKind::Refusal && who.role != AgentRole::Boss) {
    try {
      Agent fresh = runtime_.replace_agent(agent);
      copy_checklist(agent, fresh.name);
      std::string kickoff = header(FailureKind::Refusal) + "\nYou take over from " + agent +
                            ", who stopped working on the task. Your TODO list is " +
                            Checklist::storage_path(fresh.name) + "; continue from there.";
      if (trace && !trace->batch.empty()) {
        kickoff += "\nMessages " + agent + " had received:";
        for (const auto& m : trace->batch) kickoff += "\n" + m.sender + ": " + m.text;
      }
      send(fresh.name, kickoff);
      action.kind = RemediationKind::RecruitReplacement;
      action.attempts_remaining = config_.retry_budget;
      action.target = fresh.name;
      return record();
    } catch (const Error& e) {
      if (e.code() != ErrorCode::SpawnRefused) throw;
      // No room for a clone; fall through to the retry budget.
    }
  }

  std::size_t used;
  {
    std::lock_guard lock(mutex_);
    used = ++attempts_[{agent, failure.kind}];
  }
  if (used <= config_.retry_budget) {
    action.kind = RemediationKind::RetryPrompt;
    action.attempts_remaining = config_.retry_budget - used;
    action.target = agent;
    send(agent, header(failure.kind) + "\n" + failure.detail + "\n" + retry_guidance(failure.kind, agent));
    return record();
  }

  action.kind = RemediationKind::EscalateToParent;
  action.attempts_remaining = 0;
  if (!who.parent) {
    escalate_root(agent + ": " + std::string(to_string(failure.kind)) + ": " + failure.detail);
    return record();
  }
  action.target = *who.parent;
  send(*who.parent, header(failure.kind) + "\n" +
                        fmt::format("{} still fails after {} retries: {}", agent, config_.retry_budget,
                                    failure.detail) +
                        "\nHelp them finish or take over their work.");
  return record();
}

RemediationAction Supervisor::nudge_idle(const std::string& agent) {
  auto open = checklist(agent);
  std::string items = open ? text::join(open->open_items(), "; ") : std::string();
  return remediate(agent, {FailureKind::IncompleteTodo,
                           "You are idle but have not called TERMINATE." +
                               (items.empty() ? std::string() : " Open items: " + items)});
}

ValidationOutcome Supervisor::validate_result(const std::string& admin, const std::vector<MemberOutput>& outputs,
                                              const std::string& requirements,
                                              const std::set<std::string>& members) {
  const Agent reviewer = runtime_.get(admin);
  ChatRequest req;
  req.agent_name = admin;
  req.conversation = "review";
  req.system_prompt = reviewer.system_prompt;
  req.temperature = runtime_.config().temperature;
  std::string listing;
  for (const auto& out : outputs) {
    listing += "## " + out.agent + "\nFiles:";
    for (const auto& f : out.files) {
      listing += "\n### " + f + "\n";
      if (workspace_.exists(f)) {
        auto content = workspace_.read(f).content;
        if (content.size() > 4000) content = content.substr(0, 4000) + "\n[truncated]";
        listing += content;
      }
    }
    if (out.files.empty()) listing += " (none)";
    listing += "\nTODO list:\n" + out.checklist + "\n";
  }
  req.context_messages.push_back(
      {std::string(kSupervisorSender),
       "Every member of your group reports its TODO list complete. Compare their results with the requirements "
       "below. Reply with a first line of exactly ACCEPT if they are met. Otherwise reply with a first line "
       "REVISE: followed by one line per problem in the form <AgentName>: <what is missing or wrong>.\n\n"
       "Requirements:\n" +
           requirements});
  req.context_messages.push_back({std::string(kSupervisorSender), "Results:\n" + listing});

  ValidationOutcome outcome;
  ParsedReview parsed;
  for (std::size_t round = 0; round <= config_.review_retries; ++round) {
    auto resp = gateway_.complete(req);
    parsed = parse_review(resp.text, members);
    ++outcome.rounds;
    json defs = json::array();
    for (const auto& d : parsed.deficiencies) defs.push_back({{"agent", d.agent}, {"text", d.text}});
    runtime_.log().append(admin, "validation",
                          json{{"verdict", to_string(parsed.verdict)}, {"deficiencies", defs}, {"attempt", round}});
    if (parsed.verdict != ReviewVerdict::Inconclusive) break;
    req.context_messages.push_back({admin, resp.text});
    req.context_messages.push_back(
        {std::string(kSupervisorSender),
         "That reply could not be parsed. Start with ACCEPT, or with REVISE: and lines of <AgentName>: <problem> "
         "naming agents from the results."});
  }
  outcome.verdict = parsed.verdict;
  outcome.deficiencies = parsed.deficiencies;

  if (parsed.verdict == ReviewVerdict::Inconclusive) {
    outcome.escalated = true;
    if (!reviewer.parent) {
      escalate_root("the final review by " + admin + " could not be parsed");
    } else {
      send(*reviewer.parent, header(FailureKind::FormatError) + "\nThe review by " + admin +
                                 " of its group's results was inconclusive twice.");
    }
  } else if (parsed.verdict == ReviewVerdict::Revise) {
    for (const auto& d : parsed.deficiencies) {
      std::string target = runtime_.resolve(d.agent);
      add_checklist_item(target, d.text);
      send(target, header(FailureKind::IncompleteTodo) + "\nRevision requested by " + admin + ": " + d.text +
                       "\nThis was added to " + Checklist::storage_path(target) +
                       ". Fix it, mark it [done], then call TERMINATE.");
    }
  }
  return outcome;
}

}  // namespace megaagent
