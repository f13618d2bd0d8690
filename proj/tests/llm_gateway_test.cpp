// Copyright 2026 The CFC Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <doctest.h>

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <thread>

#include <nlohmann/json.hpp>

#include "cfc/hash.hpp"
#include "cfc/llm_gateway.hpp"
#include "cfc/parallel.hpp"
#include "test_util.hpp"

// After Eigen: <resolv.h> defines a `_res` macro that collides with Eigen internals.
#include <httplib.h>

using namespace cfc;
using json = nlohmann::json;
using cfc::testing::TempDir;
using cfc::testing::WriteFile;

TEST_CASE("FNV-1a and SHA-256 reference values") {
  CHECK(Hex64(Fnv1a64("")) == "cbf29ce484222325");
  CHECK(Hex64(Fnv1a64("a")) == "af63dc4c8601ec8c");
  CHECK(Sha256Hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("prompt normalization collapses whitespace") {
  CHECK(NormalizePrompt("  a \n\t b  c\n") == "a b c");
  CHECK(PromptHash("a b") == PromptHash(" a\n\nb "));
  CHECK(PromptHash("a b") != PromptHash("ab"));
}

TEST_CASE("mock fixture lookup") {
  TempDir dir;
  const std::string prompt = "Is this paper\n about   theory?";
  const std::string answer = R"([{"answer": true, "confidence": 0.8, "category": "theory"}])";
  const json rows[] = {
      {{"match", "substr:theory"}, {"response", "from rule"}},
      {{"match", "hash:" + PromptHash(prompt)}, {"response", answer}},
      {{"match", "substr:paper about"}, {"response", "normalized rule"}},
  };
  std::string text;
  for (const auto& r : rows) text += r.dump() + "\n";
  WriteFile(dir / "mock.jsonl", text);

  GatewayConfig cfg;
  cfg.mock_fixture_path = dir / "mock.jsonl";
  LlmGateway gw(cfg);
  // Exact hash beats every rule.
  CHECK(gw.Complete(prompt).response_text == answer);
  CHECK(gw.Complete("more theory please").response_text == "from rule");
  // Rules see the normalized prompt.
  CHECK(gw.Complete("the paper\n\nabout x").response_text == "normalized rule");
  CHECK_THROWS_WITH_AS(gw.Complete("nothing matches"), doctest::Contains("mock miss"), MockMissError);

  LlmGateway empty(GatewayConfig{}, MockFixture{});
  CHECK_THROWS_AS(empty.Complete("x"), MockMissError);

  WriteFile(dir / "bad.jsonl", "{\"match\": \"regex:x\", \"response\": \"\"}\n");
  CHECK_THROWS_AS(MockFixture::Load(dir / "bad.jsonl"), ValidationError);
}

TEST_CASE("mock embeddings are deterministic unit vectors") {
  GatewayConfig cfg;
  cfg.embedding_dim = 16;
  LlmGateway gw(cfg, MockFixture{});
  const Matrix e = gw.Embed({"alpha", "beta", "alpha"});
  CHECK(e.rows() == 3);
  CHECK(e.cols() == 16);
  CHECK(e.row(0) == e.row(2));
  CHECK(e.row(0) != e.row(1));
  for (int i = 0; i < 3; ++i) CHECK(std::abs(e.row(i).norm() - 1.0) < 1e-9);
  CHECK(MockEmbedding("alpha", 16) == e.row(0).transpose());
  CHECK_THROWS_AS(gw.Embed({}), GatewayError);
}

TEST_CASE("exchange log records every completion") {
  TempDir dir;
  MockFixture f;
  f.AddRule("q", "r");
  GatewayConfig cfg;
  cfg.exchange_log_path = dir / "log.jsonl";
  LlmGateway gw(cfg, f);
  gw.Complete("q1");
  gw.Complete("q2");
  const auto log = cfc::testing::ReadFile(dir / "log.jsonl");
  std::istringstream in(log);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    const auto r = json::parse(line);
    CHECK(r["response_text"] == "r");
    CHECK(r["attempt_count"] == 1);
    CHECK(r["model_name"] == "gpt-4o");
    ++n;
  }
  CHECK(n == 2);
}

TEST_CASE("config validation") {
  GatewayConfig cfg;
  cfg.max_concurrent = 0;
  CHECK_THROWS_AS(cfg.Validate(), ValidationError);
  cfg.max_concurrent = 4;
  cfg.max_retries = -1;
  CHECK_THROWS_AS(cfg.Validate(), ValidationError);
}

TEST_CASE("mock concurrency never exceeds max_concurrent") {
  MockFixture f;
  f.AddRule("p", "ok");
  GatewayConfig cfg;
  cfg.max_concurrent = 3;
  LlmGateway gw(cfg, f);
  ParallelFor(64, 16, [&](std::size_t) { gw.Complete("p"); });
  CHECK(gw.max_in_flight_observed() <= 3);
  CHECK(gw.max_in_flight_observed() >= 1);
}

namespace {

// Local OpenAI-compatible endpoint driven by a per-test handler.
class FakeServer {
 public:
  explicit FakeServer(httplib::Server::Handler chat) {
    server_.Post("/v1/chat/completions", std::move(chat));
    server_.Post("/v1/embeddings", [](const httplib::Request& req, httplib::Response& res) {
      const auto body = json::parse(req.body);
      json data = json::array();
      for (std::size_t i = 0; i < body["input"].size(); ++i) {
        data.push_back({{"index", i}, {"embedding", {static_cast<double>(i), 1.0}}});
      }
      res.set_content(json{{"data", data}}.dump(), "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~FakeServer() {
    server_.stop();
    thread_.join();
  }

  GatewayConfig Config() const {
    GatewayConfig cfg;
    cfg.mode = GatewayMode::kLive;
    cfg.base_url = "http://127.0.0.1:" + std::to_string(port_) + "/v1";
    cfg.retry_base_delay = 0.01;
    cfg.request_timeout = 5.0;
    return cfg;
  }

 private:
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

std::string ChatReply(const std::string& content) {
  return json{{"choices", {{{"message", {{"role", "assistant"}, {"content", content}}}}}}}.dump();
}

struct ApiKey {
  ApiKey() {
    ::setenv("CFC_LLM_API_KEY", "test-key", 1);
    ::unsetenv("CFC_LLM_BASE_URL");
  }
};

}  // namespace

TEST_CASE("live mode requires an API key") {
  ::unsetenv("CFC_LLM_API_KEY");
  GatewayConfig cfg;
  cfg.mode = GatewayMode::kLive;
  CHECK_THROWS_AS(LlmGateway{cfg}, GatewayError);
}

TEST_CASE("live 429 then 200 succeeds on the second attempt") {
  ApiKey key;
  std::atomic<int> calls{0};
  std::string seen_auth, seen_body;
  FakeServer server([&](const httplib::Request& req, httplib::Response& res) {
    if (calls++ == 0) {
      res.status = 429;
      return;
    }
    seen_auth = req.get_header_value("Authorization");
    seen_body = req.body;
    res.set_content(ChatReply("hello"), "application/json");
  });
  LlmGateway gw(server.Config());
  const auto ex = gw.Complete("say hello");
  CHECK(ex.response_text == "hello");
  CHECK(ex.attempt_count == 2);
  CHECK(seen_auth == "Bearer test-key");
  const auto body = json::parse(seen_body);
  CHECK(body["model"] == "gpt-4o");
  CHECK(body["temperature"] == 0.0);
  CHECK(body["messages"][0]["content"] == "say hello");
}

TEST_CASE("live client errors fail fast, server errors exhaust retries") {
  ApiKey key;
  std::atomic<int> calls{0};
  std::atomic<int> status{400};
  FakeServer server([&](const httplib::Request&, httplib::Response& res) {
    ++calls;
    res.status = status.load();
  });
  auto cfg = server.Config();
  cfg.max_retries = 2;
  LlmGateway gw(cfg);
  CHECK_THROWS_AS(gw.Complete("x"), GatewayError);
  CHECK(calls == 1);
  calls = 0;
  status = 503;
  CHECK_THROWS_WITH_AS(gw.Complete("x"), doctest::Contains("retries exhausted"), GatewayError);
  CHECK(calls == 3);
}

TEST_CASE("live requests are bounded by the timeout") {
  ApiKey key;
  FakeServer server([&](const httplib::Request&, httplib::Response& res) {
    std::this_thread::sleep_for(std::chrono::milliseconds(700));
    res.set_content(ChatReply("late"), "application/json");
  });
  auto cfg = server.Config();
  cfg.request_timeout = 0.1;
  cfg.max_retries = 1;
  LlmGateway gw(cfg);
  const auto start = std::chrono::steady_clock::now();
  CHECK_THROWS_AS(gw.Complete("x"), GatewayError);
  const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  // (max_retries + 1) * timeout plus backoff and slack.
  CHECK(elapsed < 0.6);
}

TEST_CASE("live concurrency cap and embeddings") {
  ApiKey key;
  std::atomic<int> active{0}, peak{0};
  FakeServer server([&](const httplib::Request&, httplib::Response& res) {
    const int now = ++active;
    int p = peak.load();
    while (now > p && !peak.compare_exchange_weak(p, now)) {
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
    --active;
    res.set_content(ChatReply("ok"), "application/json");
  });
  auto cfg = server.Config();
  cfg.max_concurrent = 2;
  LlmGateway gw(cfg);
  ParallelFor(12, 6, [&](std::size_t) { gw.Complete("x"); });
  CHECK(peak.load() <= 2);
  CHECK(gw.max_in_flight_observed() <= 2);

  const Matrix e = gw.Embed({"a", "b", "c"});
  CHECK(e.rows() == 3);
  CHECK(e(2, 0) == 2.0);
}
