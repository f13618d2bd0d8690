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

#include "cfc/llm_gateway.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "cfc/hash.hpp"
#include "cfc/random.hpp"

namespace cfc {
namespace {

using json = nlohmann::json;
using Clock = std::chrono::steady_clock;

constexpr int kMaxConcurrentLimit = 1024;

bool IsSpace(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

struct Endpoint {
  std::string origin;  // scheme://host[:port]
  std::string prefix;  // path prefix without trailing slash
};

Endpoint SplitBaseUrl(const std::string& base_url) {
  const auto scheme_end = base_url.find("://");
  if (scheme_end == std::string::npos) throw GatewayError("base_url lacks a scheme: " + base_url);
  const auto path_start = base_url.find('/', scheme_end + 3);
  Endpoint ep;
  ep.origin = base_url.substr(0, path_start);
  if (path_start != std::string::npos) ep.prefix = base_url.substr(path_start);
  while (!ep.prefix.empty() && ep.prefix.back() == '/') ep.prefix.pop_back();
  return ep;
}

/// RAII slot in the concurrency limiter.
class InFlight {
 public:
  InFlight(std::counting_semaphore<kMaxConcurrentLimit>& sem, std::mutex& mu, int& current,
           int& peak)
      : sem_(sem), mu_(mu), current_(current) {
    sem_.acquire();
    std::lock_guard lock(mu_);
    ++current_;
    peak = std::max(peak, current_);
  }
  ~InFlight() {
    {
      std::lock_guard lock(mu_);
      --current_;
    }
    sem_.release();
  }
  InFlight(const InFlight&) = delete;
  InFlight& operator=(const InFlight&) = delete;

 private:
  std::counting_semaphore<kMaxConcurrentLimit>& sem_;
  std::mutex& mu_;
  int& current_;
};

}  // namespace

void GatewayConfig::Validate() const {
  if (!(temperature >= 0.0)) throw ValidationError("gateway.temperature must be >= 0");
  if (max_retries < 0) throw ValidationError("gateway.max_retries must be >= 0");
  if (max_concurrent < 1 || max_concurrent > kMaxConcurrentLimit) {
    throw ValidationError("gateway.max_concurrent must be in [1, 1024]");
  }
  if (!(request_timeout > 0.0)) throw ValidationError("gateway.request_timeout must be > 0");
  if (!(retry_base_delay >= 0.0)) throw ValidationError("gateway.retry_base_delay must be >= 0");
  if (embedding_dim < 1) throw ValidationError("gateway.embedding_dim must be >= 1");
}

std::string NormalizePrompt(std::string_view prompt) {
  std::string out;
  out.reserve(prompt.size());
  bool pending_space = false;
  for (const char c : prompt) {
    if (IsSpace(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(c);
  }
  return out;
}

std::string PromptHash(std::string_view prompt) { return Hex64(Fnv1a64(NormalizePrompt(prompt))); }

// ---------------------------------------------------------------------------
// MockFixture

MockFixture MockFixture::Load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open mock fixture " + path.string());
  MockFixture f;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto where = path.string() + ":" + std::to_string(line_no);
    json r;
    try {
      r = json::parse(line);
      const auto match = r.at("match").get<std::string>();
      auto response = r.at("response").get<std::string>();
      if (match.rfind("hash:", 0) == 0) {
        f.AddHash(match.substr(5), std::move(response));
      } else if (match.rfind("substr:", 0) == 0) {
        f.AddRule(match.substr(7), std::move(response));
      } else {
        throw ValidationError("unknown match kind '" + match + "' at " + where);
      }
    } catch (const json::exception& e) {
      throw ValidationError("malformed mock fixture record at " + where + ": " + e.what());
    }
  }
  return f;
}

void MockFixture::AddHash(const std::string& hex, std::string response) {
  std::string key = hex;
  std::transform(key.begin(), key.end(), key.begin(), [](unsigned char c) { return std::tolower(c); });
  by_hash_[key] = std::move(response);
}

void MockFixture::AddRule(const std::string& substring, std::string response) {
  rules_.emplace_back(NormalizePrompt(substring), std::move(response));
}

std::optional<std::string> MockFixture::Lookup(std::string_view prompt) const {
  const std::string normalized = NormalizePrompt(prompt);
  if (const auto it = by_hash_.find(Hex64(Fnv1a64(normalized))); it != by_hash_.end()) {
    return it->second;
  }
  for (const auto& [needle, response] : rules_) {
    if (normalized.find(needle) != std::string::npos) return response;
  }
  return std::nullopt;
}

Vector MockEmbedding(std::string_view text, int dim) {
  Rng rng(Fnv1a64(text));
  Vector v(dim);
  double norm2 = 0.0;
  do {
    norm2 = 0.0;
    for (int i = 0; i < dim; ++i) {
      v(i) = rng.Uniform(-1.0, 1.0);
      norm2 += v(i) * v(i);
    }
  } while (norm2 == 0.0);
  return v / std::sqrt(norm2);
}

// ---------------------------------------------------------------------------
// LlmGateway

struct LlmGateway::HttpResult {
  int status = 0;
  std::string body;
};

LlmGateway::LlmGateway(GatewayConfig cfg) : cfg_(std::move(cfg)), slots_(0) {
  cfg_.Validate();
  if (cfg_.mode == GatewayMode::kMock) {
    if (cfg_.mock_fixture_path) fixture_ = MockFixture::Load(*cfg_.mock_fixture_path);
  } else {
    if (const char* url = std::getenv("CFC_LLM_BASE_URL"); url && *url) cfg_.base_url = url;
    const char* key = std::getenv("CFC_LLM_API_KEY");
    if (!key || !*key) throw GatewayError("live mode requires CFC_LLM_API_KEY in the environment");
    api_key_ = key;
  }
  slots_.release(cfg_.max_concurrent);
}

LlmGateway::LlmGateway(GatewayConfig cfg, MockFixture fixture) : LlmGateway(std::move(cfg)) {
  fixture_ = std::move(fixture);
}

LlmGateway::~LlmGateway() = default;

int LlmGateway::max_in_flight_observed() const {
  std::lock_guard lock(mu_);
  return max_in_flight_;
}

LlmGateway::HttpResult LlmGateway::PostWithRetry(const std::string& endpoint,
                                                 const std::string& body, int* attempts) {
  const Endpoint ep = SplitBaseUrl(cfg_.base_url);
  const auto timeout = std::chrono::duration<double>(cfg_.request_timeout);
  const auto timeout_us = std::chrono::duration_cast<std::chrono::microseconds>(timeout);
  std::string last_error;
  for (int attempt = 1; attempt <= cfg_.max_retries + 1; ++attempt) {
    *attempts = attempt;
    if (attempt > 1) {
      const double delay = cfg_.retry_base_delay * std::ldexp(1.0, attempt - 2);
      std::this_thread::sleep_for(std::chrono::duration<double>(delay));
    }
    httplib::Client client(ep.origin);
    client.set_connection_timeout(timeout_us);
    client.set_read_timeout(timeout_us);
    client.set_write_timeout(timeout_us);
    client.set_bearer_token_auth(api_key_);
    auto res = client.Post(ep.prefix + endpoint, body, "application/json");
    if (!res) {
      last_error = "transport error: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status == 429 || res->status >= 500) {
      last_error = "HTTP " + std::to_string(res->status);
      continue;
    }
    if (res->status < 200 || res->status >= 300) {
      throw GatewayError("HTTP " + std::to_string(res->status) + " from " + endpoint + ": " +
                         res->body.substr(0, 500));
    }
    return {res->status, res->body};
  }
  throw GatewayError("retries exhausted after " + std::to_string(*attempts) +
                     " attempts: " + last_error);
}

void LlmGateway::AppendLog(const ChatExchange& ex) {
  if (!cfg_.exchange_log_path) return;
  const json rec = {{"prompt_text", ex.prompt_text},     {"response_text", ex.response_text},
                    {"latency", ex.latency},             {"attempt_count", ex.attempt_count},
                    {"model_name", ex.model_name}};
  std::lock_guard lock(mu_);
  std::ofstream out(*cfg_.exchange_log_path, std::ios::app);
  out << rec.dump() << '\n';
}

ChatExchange LlmGateway::Complete(std::string_view prompt) {
  InFlight slot(slots_, mu_, in_flight_, max_in_flight_);
  const auto start = Clock::now();
  ChatExchange ex;
  ex.prompt_text = std::string(prompt);
  ex.model_name = cfg_.model_name;
  if (cfg_.mode == GatewayMode::kMock) {
    if (!fixture_) throw GatewayError("mock mode without a loaded fixture");
    auto hit = fixture_->Lookup(prompt);
    if (!hit) throw MockMissError("mock miss: no entry for prompt hash " + PromptHash(prompt));
    ex.response_text = std::move(*hit);
    ex.attempt_count = 1;
  } else {
    const json body = {
        {"model", cfg_.model_name},
        {"messages", json::array({{{"role", "user"}, {"content", ex.prompt_text}}})},
        {"temperature", cfg_.temperature}};
    const auto res = PostWithRetry("/chat/completions", body.dump(), &ex.attempt_count);
    try {
      const auto reply = json::parse(res.body);
      ex.response_text = reply.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const json::exception& e) {
      throw GatewayError(std::string("unexpected chat completion payload: ") + e.what());
    }
  }
  ex.latency = std::chrono::duration<double>(Clock::now() - start).count();
  AppendLog(ex);
  return ex;
}

Matrix LlmGateway::Embed(const std::vector<std::string>& texts) {
  if (texts.empty()) throw GatewayError("embed: empty text list");
  const auto n = static_cast<Eigen::Index>(texts.size());
  if (cfg_.mode == GatewayMode::kMock) {
    Matrix out(n, cfg_.embedding_dim);
    for (Eigen::Index i = 0; i < n; ++i) out.row(i) = MockEmbedding(texts[i], cfg_.embedding_dim);
    return out;
  }

  constexpr std::size_t kBatch = 64;
  Matrix out;
  for (std::size_t start = 0; start < texts.size(); start += kBatch) {
    const std::size_t end = std::min(texts.size(), start + kBatch);
    json body = {{"model", cfg_.embedding_model}, {"input", json::array()}};
    for (std::size_t i = start; i < end; ++i) body["input"].push_back(texts[i]);
    int attempts = 0;
    HttpResult res;
    {
      InFlight slot(slots_, mu_, in_flight_, max_in_flight_);
      res = PostWithRetry("/embeddings", body.dump(), &attempts);
    }
    try {
      const auto reply = json::parse(res.body);
      const auto& data = reply.at("data");
      if (data.size() != end - start) throw GatewayError("embedding count mismatch");
      std::size_t position = 0;
      for (const auto& item : data) {
        const auto idx = item.contains("index") ? item["index"].get<std::size_t>() : position;
        ++position;
        const auto vec = item.at("embedding").get<std::vector<double>>();
        if (out.size() == 0) out.resize(n, static_cast<Eigen::Index>(vec.size()));
        if (static_cast<Eigen::Index>(vec.size()) != out.cols()) {
          throw GatewayError("embedding dimension mismatch across batch");
        }
        if (idx >= end - start) throw GatewayError("embedding index out of range");
        for (std::size_t j = 0; j < vec.size(); ++j) {
          out(static_cast<Eigen::Index>(start + idx), static_cast<Eigen::Index>(j)) = vec[j];
        }
      }
    } catch (const json::exception& e) {
      throw GatewayError(std::string("unexpected embeddings payload: ") + e.what());
    }
  }
  return out;
}

}  // namespace cfc
