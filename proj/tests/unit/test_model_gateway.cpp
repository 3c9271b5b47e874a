// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <atomic>
#include <random>
#include <thread>

#include <httplib.h>

#include "megaagent/error.hpp"
#include "megaagent/model_gateway.hpp"
#include "scenarios.hpp"

using namespace megaagent;
using namespace megaagent::testing;
using nlohmann::json;

namespace {

ChatRequest request_for(const std::string& agent, std::string conversation = {}) {
  ChatRequest r;
  r.agent_name = agent;
  r.conversation = std::move(conversation);
  r.system_prompt = "You are " + agent + ".";
  return r;
}

struct Harness {
  UsageLedger ledger;
  EventLog log;
  ScriptedBackend backend;
  ModelGateway gateway;
  explicit Harness(ScriptedScenario s) : backend(std::move(s)), gateway(backend, ledger, &log) {
    ledger.open_stage(StageLabel::Planning);
  }
};

// Counts whitespace-separated runs without using the library splitter.
std::size_t oracle_word_count(const std::string& s) {
  std::size_t n = 0;
  bool in_word = false;
  for (char c : s) {
    bool space = c == ' ' || c == '\n' || c == '\t' || c == '\r' || c == '\f' || c == '\v';
    if (!space && !in_word) ++n;
    in_word = !space;
  }
  return n;
}

}  // namespace

TEST_CASE("scripted lookup by agent and call index") {
  ScriptedScenario s;
  s.add("Boss", 0, "plan-A");
  Harness h(s);
  CHECK(h.gateway.complete(request_for("Boss")).text == "plan-A");
}

TEST_CASE("default response covers unmapped steps") {
  ScriptedScenario s;
  s.default_response = "OK";
  Harness h(s);
  auto r = h.gateway.complete(request_for("Anyone"));
  CHECK(r.text == "OK");
  CHECK(r.parsed_calls.empty());
  CHECK(s.lookup("x", 999) == "OK");
}

TEST_CASE("counter-keyed lookup replays the scenario table") {
  std::mt19937 rng(3);
  ScriptedScenario s;
  s.default_response = "default";
  const std::vector<std::string> keys = {"Boss", "Alice", "Alice#review", "Bob"};
  for (const auto& k : keys)
    for (std::size_t i = 0; i < 6; ++i)
      if (rng() % 3) s.add(k, i, k + " step " + std::to_string(i) + (rng() % 2 ? " same" : ""));
  Harness h(s);
  std::vector<std::pair<std::string, std::string>> sent;
  for (int n = 0; n < 30; ++n) {
    const auto& k = keys[rng() % keys.size()];
    auto hash = k.find('#');
    auto req = hash == std::string::npos ? request_for(k) : request_for(k.substr(0, hash), k.substr(hash + 1));
    sent.emplace_back(k, h.gateway.complete(req).text);
  }
  // Independent replay: walk the table with our own per-key counters.
  std::map<std::string, std::size_t> counters;
  for (const auto& [key, text] : sent) {
    auto idx = counters[key]++;
    auto it = s.steps.find({key, idx});
    CHECK(text == (it == s.steps.end() ? s.default_response : it->second));
  }
  CHECK(h.gateway.transcript().size() == 30);
}

TEST_CASE("identical requests differ only when the script differs") {
  ScriptedScenario s;
  s.add("A", 0, "same");
  s.add("A", 1, "same");
  s.add("B", 0, "first");
  s.add("B", 1, "second");
  Harness h(s);
  auto req = request_for("A");
  CHECK(h.gateway.complete(req).text == h.gateway.complete(req).text);
  auto rb = request_for("B");
  CHECK(h.gateway.complete(rb).text != h.gateway.complete(rb).text);
}

TEST_CASE("token counting") {
  CHECK(count_tokens("") == 0);
  CHECK(count_tokens("develop a Gobang game") == 4);
  std::mt19937 rng(5);
  std::string paragraph;
  const char* seps[] = {" ", "  ", "\n", "\t", " \n "};
  for (int i = 0; i < 1000; ++i) {
    paragraph += std::string(1 + rng() % 8, static_cast<char>('a' + rng() % 26));
    paragraph += seps[rng() % 5];
  }
  CHECK(count_tokens(paragraph) == oracle_word_count(paragraph));
  CHECK(count_tokens(paragraph) == 1000);
}

TEST_CASE("every call is accounted exactly once") {
  ScriptedScenario s;
  s.default_response = "one two three";
  Harness h(s);
  auto req = request_for("A");
  req.context_messages.push_back({"Bob", "four five"});
  for (int i = 0; i < 5; ++i) h.gateway.complete(req);
  auto entries = h.ledger.entries();
  REQUIRE(entries.size() == 5);
  auto calls = h.log.filter("llm_call");
  REQUIRE(calls.size() == 5);
  TokenUsage sum;
  for (const auto& e : entries) {
    // system prompt "You are A." (3) + context (2) in, response (3) out
    CHECK(e.usage == TokenUsage{5, 3});
    sum += e.usage;
  }
  std::uint64_t logged_in = 0;
  for (const auto& c : calls) logged_in += c.detail["input_tokens"].get<std::uint64_t>();
  CHECK(logged_in == sum.input_tokens);
  CHECK(calls[0].detail["stage"] == "Planning");
}

TEST_CASE("calls need an open stage") {
  UsageLedger ledger;
  ScriptedBackend backend(ScriptedScenario{});
  ModelGateway gateway(backend, ledger);
  CHECK_THROWS_AS(gateway.complete(request_for("A")), Error);
}

TEST_CASE("function calls are parsed out of responses") {
  ScriptedScenario s;
  s.add("A", 0, "I will write it.\n" + call("write_file", {{"filename", "a.txt"}, {"content", "x"}}) + "done");
  Harness h(s);
  auto r = h.gateway.complete(request_for("A"));
  REQUIRE(r.parsed_calls.size() == 1);
  CHECK(r.parsed_calls[0].tool_name == "write_file");
  CHECK(r.parsed_calls[0].arg("filename") == "a.txt");
}

TEST_CASE("concurrent agents keep independent counters") {
  ScriptedScenario s;
  for (int a = 0; a < 8; ++a)
    for (int i = 0; i < 20; ++i) s.add("A" + std::to_string(a), i, std::to_string(i));
  Harness h(s);
  std::vector<std::thread> threads;
  std::atomic<int> mismatches{0};
  for (int a = 0; a < 8; ++a)
    threads.emplace_back([&, a] {
      auto req = request_for("A" + std::to_string(a));
      for (int i = 0; i < 20; ++i)
        if (h.gateway.complete(req).text != std::to_string(i)) ++mismatches;
    });
  for (auto& t : threads) t.join();
  CHECK(mismatches == 0);
  CHECK(h.backend.calls_for("A3") == 20);
}

TEST_CASE("two runs of the same script give identical transcripts") {
  auto sc = gobang();
  auto transcript_of = [&] {
    TempDir dir;
    RunConfig cfg = sc.config;
    ScriptedBackend backend(sc.script);
    Orchestrator orch(backend, cfg);
    orch.run(sc.meta_prompt);
    std::map<std::pair<std::string, std::size_t>, std::string> by_key;
    for (const auto& t : orch.gateway().transcript()) by_key[{t.key, t.index}] = t.response;
    return by_key;
  };
  CHECK(transcript_of() == transcript_of());
}

TEST_CASE("scenario files round-trip and reject bad input") {
  TempDir dir;
  ScriptedScenario s;
  s.default_response = "fallback";
  s.add("Boss", 0, "a");
  s.add("Boss#review", 2, "ACCEPT");
  s.save(dir.path() / "s.json");
  auto loaded = ScriptedScenario::load(dir.path() / "s.json");
  CHECK(loaded.steps == s.steps);
  CHECK(loaded.default_response == "fallback");
  CHECK_THROWS_AS(ScriptedScenario::from_json(json{{"steps", {{{"agent", "A"}, {"index", -1}, {"response", ""}}}}}),
                  Error);
  CHECK_THROWS_AS(ScriptedScenario::from_json(json{{"steps", {{{"agent", "A"}}}}}), Error);
  CHECK_THROWS_AS(ScriptedScenario::load(dir.path() / "missing.json"), Error);
}

// ---- HTTP backend against a local server ------------------------------------

namespace {

struct LocalServer {
  httplib::Server server;
  int port = 0;
  std::thread thread;
  std::atomic<int> hits{0};
  json last_body;
  std::string last_auth;
  std::mutex mutex;

  explicit LocalServer(std::function<void(int, httplib::Response&)> reply) {
    server.Post("/v1/chat/completions", [this, reply](const httplib::Request& req, httplib::Response& res) {
      int n = ++hits;
      {
        std::lock_guard lock(mutex);
        last_body = json::parse(req.body, nullptr, false);
        last_auth = req.get_header_value("Authorization");
      }
      reply(n, res);
    });
    port = server.bind_to_any_port("127.0.0.1");
    thread = std::thread([this] { server.listen_after_bind(); });
    server.wait_until_ready();
  }
  ~LocalServer() {
    server.stop();
    thread.join();
  }
  HttpBackendConfig config() const {
    HttpBackendConfig c;
    c.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/v1/chat/completions";
    c.model = "test-model";
    c.api_key = "secret";
    c.initial_backoff = std::chrono::milliseconds{5};
    c.timeout = std::chrono::seconds{5};
    return c;
  }
};

std::string completion(const std::string& text, int in, int out) {
  return json{{"choices", {{{"message", {{"role", "assistant"}, {"content", text}}}}}},
              {"usage", {{"prompt_tokens", in}, {"completion_tokens", out}}}}
      .dump();
}

}  // namespace

TEST_CASE("HTTP backend posts a chat completion and uses reported usage") {
  LocalServer srv([](int, httplib::Response& res) { res.set_content(completion("hello there", 42, 7), "application/json"); });
  HttpBackend backend(srv.config());
  UsageLedger ledger;
  ledger.open_stage(StageLabel::Planning);
  ModelGateway gateway(backend, ledger);
  auto req = request_for("Alice");
  req.context_messages = {{"Boss", "start"}, {"Alice", "ok"}};
  req.tool_schemas = registry_schemas();
  auto r = gateway.complete(req);
  CHECK(r.text == "hello there");
  CHECK(r.usage == TokenUsage{42, 7});
  CHECK(srv.last_auth == "Bearer secret");
  auto body = srv.last_body;
  CHECK(body["model"] == "test-model");
  CHECK(body["temperature"] == 0.0);
  REQUIRE(body["messages"].size() == 3);
  CHECK(body["messages"][0]["role"] == "system");
  CHECK(body["messages"][0]["content"].get<std::string>().find("add_agent") != std::string::npos);
  CHECK(body["messages"][1]["content"] == "Boss: start");
  CHECK(body["messages"][2]["role"] == "assistant");
}

TEST_CASE("HTTP backend retries transient failures") {
  LocalServer srv([](int n, httplib::Response& res) {
    if (n < 3) {
      res.status = 503;
      return;
    }
    res.set_content(completion("third time", 1, 2), "application/json");
  });
  HttpBackend backend(srv.config());
  CHECK(backend.complete(request_for("A")).text == "third time");
  CHECK(srv.hits == 3);
}

TEST_CASE("HTTP backend gives up after three attempts") {
  LocalServer srv([](int, httplib::Response& res) { res.status = 500; });
  HttpBackend backend(srv.config());
  try {
    backend.complete(request_for("A"));
    FAIL("expected BackendUnavailable");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::BackendUnavailable);
  }
  CHECK(srv.hits == 3);
}

TEST_CASE("HTTP backend does not retry client errors") {
  LocalServer srv([](int, httplib::Response& res) { res.status = 401; });
  HttpBackend backend(srv.config());
  CHECK_THROWS_AS(backend.complete(request_for("A")), Error);
  CHECK(srv.hits == 1);
}

TEST_CASE("HTTP backend reports an unreachable endpoint") {
  HttpBackendConfig c;
  c.endpoint = "http://127.0.0.1:1/v1/chat/completions";
  c.initial_backoff = std::chrono::milliseconds{1};
  c.timeout = std::chrono::seconds{1};
  HttpBackend backend(c);
  CHECK_THROWS_AS(backend.complete(request_for("A")), Error);
  CHECK_THROWS_AS(HttpBackend(HttpBackendConfig{"no-scheme"}), Error);
}
