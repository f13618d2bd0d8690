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
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cfc/graph.hpp"
#include "cfc/llm_gateway.hpp"
#include "cfc/prompts.hpp"

namespace cfc {

enum class RejectMode { kEasy, kHard };

std::string ToString(RejectMode mode);
RejectMode ParseRejectMode(const std::string& s);

struct CoarseConfig {
  RejectMode mode = RejectMode::kEasy;
  double tau = 0.7;
  int candidate_count = 10;
  int max_parse_retries = 2;
  std::optional<std::int64_t> node_budget;
  std::uint64_t seed = 0;  // node_budget subsampling
  std::size_t text_budget = 4000;

  void Validate() const;
};

/// One parsed LLM detection verdict.
struct DetectionVerdict {
  bool is_id = true;
  double confidence = 0.0;
  std::string category;
};

struct Annotation {
  NodeId node_id = 0;
  bool is_id = true;
  double confidence = 0.0;
  std::string category;
  std::string raw_response;
  bool parsed = false;  // false: conservative fallback (ID, confidence 0)
};

/// The LLM-proposed OOD label space used by Hard-Reject prompts.
struct HardRejectSpace {
  std::string major_category;
  std::vector<std::string> candidate_ood_labels;
};

struct CoarseResult {
  RejectMode mode = RejectMode::kEasy;
  double tau = 0.7;
  std::vector<NodeId> ood_ids;          // sorted
  std::vector<Annotation> annotations;  // sorted by node_id
  std::vector<std::string> candidate_ood_labels;
  std::string major_category;
  std::map<std::string, std::int64_t> category_log;
};

/// Raised when the gateway fails hard mid-run. `partial` holds every
/// annotation finished before the failure.
class CoarseDetectError : public GatewayError {
 public:
  CoarseDetectError(const std::string& what, CoarseResult partial)
      : GatewayError(what), partial_(std::move(partial)) {}
  const CoarseResult& partial() const { return partial_; }

 private:
  CoarseResult partial_;
};

// Prompt builders. All are pure functions of their inputs.

std::string BuildMajorCategoryPrompt(const std::vector<std::string>& id_labels,
                                     const PromptTemplates& t = PromptTemplates::Defaults());

std::string BuildCandidateOodPrompt(const std::vector<std::string>& id_labels,
                                    const std::string& major_category, int n,
                                    const PromptTemplates& t = PromptTemplates::Defaults());

std::string BuildEasyRejectPrompt(const std::string& node_text,
                                  const std::vector<std::string>& id_labels,
                                  std::size_t text_budget = 4000,
                                  const PromptTemplates& t = PromptTemplates::Defaults());

std::string BuildHardRejectPrompt(const std::string& node_text,
                                  const std::vector<std::string>& id_labels,
                                  const std::vector<std::string>& candidate_ood_labels,
                                  std::size_t text_budget = 4000,
                                  const PromptTemplates& t = PromptTemplates::Defaults());

/// Throws ParseError when no JSON is present or "answer" is missing.
DetectionVerdict ParseDetectionResponse(std::string_view raw);

/// `[{"answer": "..."}]` -> "...".
std::string ParseMajorCategoryResponse(std::string_view raw);

/// List of answers in response order, duplicates kept.
std::vector<std::string> ParseCandidateResponse(std::string_view raw);

/// Issues the major-category and candidate-label prompts (one call each).
/// Candidates are deduplicated case-insensitively, candidates naming an ID
/// label are dropped, and at most `n` are kept.
HardRejectSpace GenerateHardRejectSpace(const std::vector<std::string>& id_labels, int n,
                                        LlmGateway& gateway,
                                        const PromptTemplates& t = PromptTemplates::Defaults());

/// Queries every node in `query_ids` (or a seeded subsample when node_budget
/// is set). In Hard-Reject mode `hard_space` is used when given, otherwise it
/// is generated first.
CoarseResult CoarseDetect(const Graph& g, const std::vector<NodeId>& query_ids,
                          const std::vector<std::string>& id_labels, const CoarseConfig& cfg,
                          LlmGateway& gateway,
                          const PromptTemplates& t = PromptTemplates::Defaults(),
                          std::optional<HardRejectSpace> hard_space = std::nullopt);

/// Recomputes ood_ids and category_log from annotations at threshold `tau`.
void SummarizeCoarse(CoarseResult& result, double tau);

void WriteCoarseResult(const std::filesystem::path& path, const CoarseResult& r);
CoarseResult ReadCoarseResult(const std::filesystem::path& path);

}  // namespace cfc
