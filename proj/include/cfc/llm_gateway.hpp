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

#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "cfc/common.hpp"

namespace cfc {

enum class GatewayMode { kLive, kMock };

struct GatewayConfig {
  std::string base_url = "https://api.openai.com/v1";
  std::string model_name = "gpt-4o";
  std::string embedding_model = "text-embedding-3-small";
  double temperature = 0.0;
  int max_retries = 3;
  double request_timeout = 60.0;  // seconds
  int max_concurrent = 4;
  double retry_base_delay = 1.0;  // seconds; doubled on every retry
  GatewayMode mode = GatewayMode::kMock;
  std::optional<std::filesystem::path> mock_fixture_path;
  int embedding_dim = 64;  // mock embeddings only
  std::optional<std::filesystem::path> exchange_log_path;

  void Validate() const;
};

struct ChatExchange {
  std::string prompt_text;
  std::string response_text;
  double latency = 0.0;
  int attempt_count = 0;
  std::string model_name;
};

class GatewayError : public Error {
 public:
  using Error::Error;
};

/// No hash entry and no substring rule matched the prompt.
class MockMissError : public GatewayError {
 public:
  using GatewayError::GatewayError;
};

/// Collapses whitespace runs to one space and trims both ends.
std::string NormalizePrompt(std::string_view prompt);

/// FNV-1a 64 of the normalized prompt, as used by "hash:<hex>" fixture keys.
std::string PromptHash(std::string_view prompt);

/// Offline response table. Exact-hash entries win over substring rules;
/// rules are tried in file order against the normalized prompt.
class MockFixture {
 public:
  static MockFixture Load(const std::filesystem::path& path);

  void AddHash(const std::string& hex, std::string response);
  void AddRule(const std::string& substring, std::string response);

  std::optional<std::string> Lookup(std::string_view prompt) const;

 private:
  std::unordered_map<std::string, std::string> by_hash_;
  std::vector<std::pair<std::string, std::string>> rules_;
};

/// Deterministic unit vector seeded by the text's FNV-1a hash.
Vector MockEmbedding(std::string_view text, int dim);

/// Chat completion and embedding client for OpenAI-compatible endpoints.
/// Thread-safe; at most max_concurrent requests are in flight.
class LlmGateway {
 public:
  explicit LlmGateway(GatewayConfig cfg);
  LlmGateway(GatewayConfig cfg, MockFixture fixture);
  ~LlmGateway();

  LlmGateway(const LlmGateway&) = delete;
  LlmGateway& operator=(const LlmGateway&) = delete;

  ChatExchange Complete(std::string_view prompt);
  Matrix Embed(const std::vector<std::string>& texts);

  const GatewayConfig& config() const { return cfg_; }
  int max_in_flight_observed() const;

 private:
  struct HttpResult;

  HttpResult PostWithRetry(const std::string& endpoint, const std::string& body, int* attempts);
  void AppendLog(const ChatExchange& ex);

  GatewayConfig cfg_;
  std::optional<MockFixture> fixture_;
  std::string api_key_;
  std::counting_semaphore<1024> slots_;
  mutable std::mutex mu_;
  int in_flight_ = 0;
  int max_in_flight_ = 0;
};

}  // namespace cfc
