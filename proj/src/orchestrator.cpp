// SPDX-License-Identifier: Apache-2.0
#include "megaagent/orchestrator.hpp"

#include <algorithm>
#include <regex>

#include <fmt/core.h>

#include "megaagent/error.hpp"
#include "megaagent/text_util.hpp"

namespace megaagent {

using nlohmann::json;
namespace fs = std::filesystem;

// ---- employee blocks -------------------------------------------------------

EmployeeSpecs parse_employee_specs(std::string_view input) {
  static const std::regex open_re(R"re(<employee\s+name\s*=\s*"([^"]*)"\s*>)re");
  static const std::regex beginner_re(R"re(<beginner>([^<]*)</beginner>)re");
  static constexpr std::string_view kClose = "</employee>";

  EmployeeSpecs out;
  const std::string text(input);

  struct Tag {
    std::size_t begin, end;
    bool open;
    std::string name;
  };
  std::vector<Tag> tags;
  std::vector<std::size_t> well_formed_opens;
  for (auto it = std::sregex_iterator(text.begin(), text.end(), open_re); it != std::sregex_iterator(); ++it) {
    auto pos = static_cast<std::size_t>(it->position(0));
    tags.push_back({pos, pos + static_cast<std::size_t>(it->length(0)), true, (*it)[1].str()});
    well_formed_opens.push_back(pos);
  }
  // "<employee" that is not a well-formed opening tag.
  for (auto pos = text.find("<employee"); pos != std::string::npos; pos = text.find("<employee", pos + 1)) {
    if (!std::binary_search(well_formed_opens.begin(), well_formed_opens.end(), pos))
      out.issues.push_back({pos, "employee tag without a quoted name attribute"});
  }
  for (auto pos = text.find(kClose); pos != std::string::npos; pos = text.find(kClose, pos + 1))
    tags.push_back({pos, pos + kClose.size(), false, {}});
  std::sort(tags.begin(), tags.end(), [](const Tag& a, const Tag& b) { return a.begin < b.begin; });

  std::set<std::string> names;
  const Tag* open = nullptr;
  for (const auto& tag : tags) {
    if (tag.open) {
      if (open) out.issues.push_back({open->begin, "<employee name=\"" + open->name + "\"> is never closed"});
      open = &tag;
      continue;
    }
    if (!open) {
      out.issues.push_back({tag.begin, "</employee> without a matching opening tag"});
      continue;
    }
    std::string name(text::trim(open->name));
    std::string body(text::trim(std::string_view(text).substr(open->end, tag.begin - open->end)));
    if (!text::is_valid_agent_name(name) || name == kSupervisorSender)
      out.issues.push_back({open->begin, "invalid employee name \"" + open->name + "\""});
    else if (!names.insert(name).second)
      out.issues.push_back({open->begin, "duplicate employee name \"" + name + "\""});
    else
      out.specs.push_back({std::move(name), std::move(body), false});
    open = nullptr;
  }
  if (open) out.issues.push_back({open->begin, "<employee name=\"" + open->name + "\"> is never closed"});
  std::sort(out.issues.begin(), out.issues.end(), [](const auto& a, const auto& b) { return a.offset < b.offset; });

  std::smatch m;
  if (std::regex_search(text, m, beginner_re)) {
    std::string who(text::trim(m[1].str()));
    for (auto& s : out.specs) {
      if (s.name == who) {
        s.is_beginner = true;
        out.beginner = who;
      }
    }
  }
  return out;
}

// ---- deliverable -----------------------------------------------------------

std::string_view to_string(RunStatus status) { return status == RunStatus::Complete ? "complete" : "partial"; }

json Deliverable::to_json() const {
  json files_json = json::array();
  for (const auto& f : files) files_json.push_back({{"path", f.path}, {"hash", f.hash.str()}});
  json j{{"status", to_string(status)}, {"files", files_json}, {"summary", summary}, {"ledger", report.to_json()}};
  if (!diagnostic.empty()) j["diagnostic"] = diagnostic;
  return j;
}

// ---- orchestrator ------------------------------------------------------------

namespace {

constexpr std::string_view kDecompositionRequest =
    "Split the task into roles. Describe each role in its own <employee name=\"Name\">...</employee> block, "
    "written as that employee's instructions, and name the employee who starts the project in "
    "<beginner>Name</beginner>.";

std::string kickoff_text(const std::string& name) {
  return "The project has started; begin your work now. Keep your TODO list " + Checklist::storage_path(name) +
         " up to date (read it before writing it) and call TERMINATE once every item is marked [done].";
}

}  // namespace

Orchestrator::Orchestrator(ModelBackend& backend, RunConfig config) : config_(std::move(config)) {
  log_ = config_.log_path ? std::make_unique<EventLog>(*config_.log_path) : std::make_unique<EventLog>();
  ledger_ = std::make_unique<UsageLedger>(log_->origin());
  gateway_ = std::make_unique<ModelGateway>(backend, *ledger_, log_.get());
  if (config_.workspace_dir) {
    workspace_ = std::make_unique<Workspace>(*config_.workspace_dir, log_.get());
    memory_ = std::make_unique<MemoryStore>(std::make_shared<HashingEmbedder>(), *config_.workspace_dir / "memory");
  } else {
    workspace_ = std::make_unique<Workspace>();
    memory_ = std::make_unique<MemoryStore>();
  }
  runtime_ = std::make_unique<Runtime>(config_.runtime, *log_);
  supervisor_ = std::make_unique<Supervisor>(*runtime_, *workspace_, *gateway_, config_.supervisor, config_.sandbox);
  tools_ = std::make_unique<ToolRegistry>(*runtime_, *workspace_, *supervisor_, config_.sandbox);
  context_ = std::make_unique<RuntimeContext>(RuntimeContext{*runtime_, *gateway_, *tools_, *workspace_, *memory_,
                                                             *supervisor_,
                                                             config_.runtime.serial ? &serial_gate_ : nullptr});
  scheduler_ = std::make_unique<Scheduler>(*context_);
}

Orchestrator::~Orchestrator() {
  runtime_->set_spawn_listener(nullptr);
  scheduler_->shutdown();
}

void Orchestrator::open_stage(StageLabel stage) {
  const double at = ledger_->now();
  auto previous = ledger_->current_stage();
  ledger_->open_stage(stage, at);
  if (previous) log_->append("orchestrator", "stage", json{{"stage", to_string(*previous)}, {"edge", "close"}, {"at", at}});
  log_->append("orchestrator", "stage", json{{"stage", to_string(stage)}, {"edge", "open"}, {"at", at}});
}

void Orchestrator::close_stage(StageLabel stage) {
  const double at = ledger_->now();
  ledger_->close_stage(stage, at);
  log_->append("orchestrator", "stage", json{{"stage", to_string(stage)}, {"edge", "close"}, {"at", at}});
}

Hierarchy Orchestrator::bootstrap(const std::string& meta_prompt) {
  if (text::trim(meta_prompt).empty()) throw Error(ErrorCode::InvalidConfig, "the meta prompt is empty");
  meta_prompt_ = meta_prompt;
  const std::string boss = config_.orchestrator.boss_name;
  log_->append("orchestrator", "run_start", json{{"boss", boss}});
  open_stage(StageLabel::Planning);
  runtime_->add_boss(boss, meta_prompt);
  runtime_->transition(boss, AgentState::Processing);

  ChatRequest req;
  req.agent_name = boss;
  req.conversation = std::string(kMainConversation);
  req.system_prompt = meta_prompt;
  req.tool_schemas = tools_->schemas();
  req.temperature = config_.runtime.temperature;
  req.context_messages.push_back({"user", std::string(kDecompositionRequest)});

  auto wants_terminate = [](const ModelResponse& r) {
    return std::any_of(r.parsed_calls.begin(), r.parsed_calls.end(),
                       [](const auto& c) { return c.tool_name == tool_names::kTerminate; });
  };
  auto report_issues = [&](const EmployeeSpecs& parsed) {
    for (const auto& issue : parsed.issues)
      log_->append(boss, "malformed_tag", json{{"offset", issue.offset}, {"reason", issue.reason}});
  };

  ModelResponse resp = gateway_->complete(req);
  EmployeeSpecs parsed = parse_employee_specs(resp.text);
  report_issues(parsed);
  boss_terminated_ = wants_terminate(resp);
  if (!boss_terminated_ && parsed.specs.empty()) {
    req.context_messages.push_back({boss, resp.text});
    req.context_messages.push_back(
        {std::string(kSupervisorSender),
         Supervisor::header(FailureKind::FormatError) +
             "\nNo <employee name=\"...\">...</employee> blocks were found. Describe every role in such a block."});
    resp = gateway_->complete(req);
    parsed = parse_employee_specs(resp.text);
    report_issues(parsed);
    boss_terminated_ = wants_terminate(resp);
  }
  memory_->append(boss, text::trim(resp.text).empty() ? "(empty decomposition)" : resp.text);

  if (!boss_terminated_ && parsed.specs.empty()) {
    log_->append(boss, "verify",
                 json{{"ok", false}, {"kind", "FormatError"}, {"detail", "no employee blocks after one retry"}});
    runtime_->transition(boss, AgentState::Response);
    runtime_->transition(boss, AgentState::Idle);
    throw Error(ErrorCode::EmptyDecomposition, "the Boss produced no employee blocks after one retry");
  }
  log_->append(boss, "verify", json{{"ok", true}});

  if (boss_terminated_) {
    runtime_->mark_finished(boss);
  } else {
    std::vector<std::string> spawned;
    for (const auto& spec : parsed.specs) {
      try {
        runtime_->spawn_agent(boss, spec.name, spec.prompt_body);
        supervisor_->init_checklist(spec.name, config_.orchestrator.initial_checklist);
        spawned.push_back(spec.name);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::SpawnRefused) throw;
      }
    }
    std::vector<std::string> targets;
    if (parsed.beginner && std::find(spawned.begin(), spawned.end(), *parsed.beginner) != spawned.end())
      targets.push_back(*parsed.beginner);
    else
      targets = spawned;
    for (const auto& t : targets) {
      auto seq = runtime_->enqueue(boss, t, kickoff_text(t));
      log_->append(boss, "dispatch", json{{"recipient", t}, {"seq", seq}});
    }
  }
  runtime_->transition(boss, AgentState::Response);
  runtime_->transition(boss, AgentState::Idle);
  open_stage(StageLabel::TaskSolving);
  return runtime_->hierarchy();
}

Deliverable Orchestrator::run(const std::string& meta_prompt) {
  try {
    bootstrap(meta_prompt);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::EmptyDecomposition && e.code() != ErrorCode::BackendUnavailable) throw;
    return finish(RunStatus::Partial, e.what());
  }
  if (boss_terminated_) return finish(RunStatus::Complete, {});

  runtime_->set_spawn_listener([this](const std::string& name) { scheduler_->launch(name); });
  for (const auto& a : runtime_->agents()) scheduler_->launch(a.name);

  RunStatus status = RunStatus::Complete;
  std::string diagnostic;
  try {
    monitor();
  } catch (const Abort& a) {
    status = RunStatus::Partial;
    diagnostic = a.reason;
  }
  runtime_->set_spawn_listener(nullptr);
  scheduler_->shutdown();
  tools_->release_all();
  return finish(status, diagnostic);
}

Deliverable Orchestrator::finish(RunStatus status, std::string diagnostic) {
  open_stage(StageLabel::Merging);
  Deliverable d = aggregate();
  close_stage(StageLabel::Merging);
  d.report = make_report(*ledger_, runtime_->agent_count());
  d.status = status;
  d.diagnostic = std::move(diagnostic);
  json files = json::array();
  for (const auto& f : d.files) files.push_back(f.path);
  json detail{{"status", to_string(status)}, {"files", files}};
  if (!d.diagnostic.empty()) detail["diagnostic"] = d.diagnostic;
  log_->append("orchestrator", "run_end", detail);
  return d;
}

Deliverable Orchestrator::aggregate() {
  Deliverable d;
  for (auto& [path, hash] : workspace_->heads())
    if (!Checklist::is_storage_path(path)) d.files.push_back({path, hash});

  std::vector<std::string> paths;
  for (const auto& f : d.files) paths.push_back(f.path);
  d.summary = text::join(paths, "\n");

  const bool use_model = config_.orchestrator.model_summary.value_or(!gateway_->deterministic());
  if (use_model && runtime_->boss()) {
    ChatRequest req;
    req.agent_name = *runtime_->boss();
    req.conversation = "merge";
    req.system_prompt = meta_prompt_;
    req.temperature = config_.runtime.temperature;
    std::string listing;
    for (const auto& f : d.files) {
      auto content = workspace_->read(f.path).content;
      if (content.size() > 2000) content = content.substr(0, 2000) + "\n[truncated]";
      listing += "### " + f.path + "\n" + content + "\n";
    }
    req.context_messages.push_back(
        {std::string(kSupervisorSender),
         "All work is finished and reviewed. Summarize the final deliverable for the user.\nFiles:\n" + listing});
    try {
      auto resp = gateway_->complete(req);
      if (!text::trim(resp.text).empty()) d.summary = resp.text;
    } catch (const Error& e) {
      log_->append(*runtime_->boss(), "merge_failed", json{{"error", e.what()}});
    }
  }
  d.report = make_report(*ledger_, runtime_->agent_count());
  return d;
}

// ---- monitoring --------------------------------------------------------------

std::vector<std::string> Orchestrator::live_members(const std::string& admin, const Hierarchy& h) const {
  std::vector<std::string> out;
  for (const auto& n : h.descendants(admin)) {
    auto a = runtime_->find(n);
    if (a && !a->retired) out.push_back(n);
  }
  return out;
}

std::map<std::string, std::uint64_t> Orchestrator::epochs_of(const std::vector<std::string>& members) const {
  std::map<std::string, std::uint64_t> out;
  for (const auto& m : members)
    if (auto a = runtime_->find(m)) out[m] = a->finish_epoch;
  return out;
}

bool Orchestrator::group_ready(const std::string& admin, const Hierarchy& h) const {
  auto self = runtime_->find(admin);
  if (!self || self->retired || self->state != AgentState::Idle || runtime_->queue_size(admin) != 0) return false;
  auto kids = h.children.find(admin);
  if (kids == h.children.end()) return false;
  bool any = false;
  for (const auto& c : kids->second) {
    auto a = runtime_->find(c);
    if (!a || a->retired) continue;
    any = true;
    if (!a->finished || a->state != AgentState::Idle || runtime_->queue_size(c) != 0) return false;
    auto grand = h.children.find(c);
    if (grand != h.children.end() && !grand->second.empty()) {
      auto it = accepted_.find(c);
      if (it == accepted_.end() || it->second != epochs_of(live_members(c, h))) return false;
    }
  }
  return any;
}

bool Orchestrator::all_groups_accepted(const Hierarchy& h) const {
  for (const auto& a : runtime_->agents()) {
    if (a.role == AgentRole::Boss || a.retired) continue;
    auto members = live_members(a.name, h);
    if (members.empty()) continue;
    auto it = accepted_.find(a.name);
    if (it == accepted_.end() || it->second != epochs_of(members)) return false;
  }
  return true;
}

bool Orchestrator::everyone_finished() const {
  for (const auto& a : runtime_->agents())
    if (a.role != AgentRole::Boss && !a.retired && !a.finished) return false;
  return true;
}

std::vector<MemberOutput> Orchestrator::outputs_for(const std::vector<std::string>& members) const {
  auto authored = tools_->files_by_author();
  std::vector<MemberOutput> out;
  for (const auto& m : members) {
    MemberOutput o;
    o.agent = m;
    for (const auto& f : authored[m])
      if (!Checklist::is_storage_path(f)) o.files.push_back(f);
    if (auto list = supervisor_->checklist(m)) o.checklist = list->render();
    out.push_back(std::move(o));
  }
  return out;
}

bool Orchestrator::validate_ready_groups() {
  const Hierarchy h = runtime_->hierarchy();
  std::vector<Agent> admins;
  for (const auto& a : runtime_->agents())
    if (a.role != AgentRole::Boss && !a.retired && !live_members(a.name, h).empty()) admins.push_back(a);
  std::stable_sort(admins.begin(), admins.end(), [](const Agent& a, const Agent& b) { return a.level > b.level; });

  for (const auto& admin : admins) {
    if (!group_ready(admin.name, h)) continue;
    auto members = live_members(admin.name, h);
    auto epochs = epochs_of(members);
    if (auto it = accepted_.find(admin.name); it != accepted_.end() && it->second == epochs) continue;
    if (auto it = escalated_.find(admin.name); it != escalated_.end() && it->second == epochs) continue;
    auto outcome = supervisor_->validate_result(admin.name, outputs_for(members), admin.system_prompt,
                                                std::set<std::string>(members.begin(), members.end()));
    if (outcome.verdict == ReviewVerdict::Accepted) {
      accepted_[admin.name] = epochs;
      ++acceptances_;
      log_->append(admin.name, "accepted", json{{"members", members}});
    } else if (outcome.escalated) {
      escalated_[admin.name] = epochs;
    }
    return true;
  }

  auto boss = runtime_->boss();
  if (!boss) return false;
  std::vector<std::string> everyone;
  for (const auto& a : runtime_->agents())
    if (a.role != AgentRole::Boss && !a.retired) everyone.push_back(a.name);
  if (everyone.empty() || !runtime_->all_quiet() || !everyone_finished() || !all_groups_accepted(h)) return false;
  auto epochs = epochs_of(everyone);
  if (boss_accepted_ == epochs || boss_escalated_ == epochs) return false;
  auto outcome = supervisor_->validate_result(*boss, outputs_for(everyone), meta_prompt_,
                                              std::set<std::string>(everyone.begin(), everyone.end()));
  if (outcome.verdict == ReviewVerdict::Accepted) {
    boss_accepted_ = epochs;
    ++acceptances_;
    log_->append(*boss, "accepted", json{{"members", everyone}});
  } else if (outcome.escalated) {
    boss_escalated_ = epochs;
  }
  return true;
}

void Orchestrator::monitor() {
  auto& rt = *runtime_;
  const auto poll = config_.runtime.poll_interval;
  const double timeout_s = std::chrono::duration<double>(config_.orchestrator.deadlock_timeout).count();
  std::uint64_t seen = rt.activity();
  bool swept = false;
  std::uint64_t progress_at_sweep = 0;
  auto progress = [&] { return rt.finish_generation() + acceptances_; };

  while (true) {
    rt.wait_activity(seen, poll);
    seen = rt.activity();
    if (auto why = supervisor_->root_escalation()) throw Abort{"EscalationAtRoot: " + *why};

    if (validate_ready_groups()) continue;
    if (auto why = supervisor_->root_escalation()) throw Abort{"EscalationAtRoot: " + *why};

    const Hierarchy h = rt.hierarchy();
    std::vector<std::string> everyone;
    for (const auto& a : rt.agents())
      if (a.role != AgentRole::Boss && !a.retired) everyone.push_back(a.name);
    const bool reviewed = everyone.empty() || boss_accepted_ == epochs_of(everyone);
    if (rt.all_quiet() && everyone_finished() && all_groups_accepted(h) && reviewed) {
      // Re-check after the snapshot: nothing may have moved in between.
      if (rt.all_quiet() && everyone_finished()) return;
    }

    if (log_->now() - log_->last_event_time() < timeout_s) continue;
    if (swept && progress() == progress_at_sweep)
      throw Abort{fmt::format("DeadlockSuspected: no progress for {:.1f} s after a supervisor sweep", timeout_s)};
    swept = true;
    progress_at_sweep = progress();
    log_->append("supervisor", "deadlock_sweep", json{{"idle_seconds", timeout_s}});
    for (const auto& a : rt.agents()) {
      if (a.role == AgentRole::Boss || a.retired || a.finished) continue;
      if (a.state != AgentState::Idle || rt.queue_size(a.name) != 0) continue;
      supervisor_->nudge_idle(a.name);
    }
  }
}

}  // namespace megaagent
