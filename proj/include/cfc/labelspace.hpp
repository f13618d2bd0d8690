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

/// Merged, filtered set of LLM-generated outlier categories.
struct PostLabelSpace {
  std::vector<std::string> merged_labels;  // descending total count
  std::map<std::string, std::int64_t> label_counts;
  // Raw category -> merged label; nullopt when its group was discarded.
  std::map<std::string, std::optional<std::string>> raw_to_merged;
  std::int64_t min_count = 2;
  double sim_threshold = 0.5;

  bool empty() const { return merged_labels.empty(); }
};

struct OodAssignment {
  NodeId node_id = 0;
  std::string predicted_label;
  double confidence = 0.0;
  std::string raw_response;
};

/// Lowercase alphanumeric runs.
std::vector<std::string> Tokenize(std::string_view text);

/// TF-IDF rows (one per category) over the vocabulary of `categories`:
/// raw term counts, idf = ln((1+n)/(1+df)) + 1, rows L2-normalized.
Matrix TfidfVectors(const std::vector<std::string>& categories);

/// Cosine similarity; 0 when either vector is zero. Throws on length mismatch.
double Cosine(const Vector& u, const Vector& v);

/// max(2, ceil(1% of the candidate count)).
std::int64_t DefaultMinCount(std::int64_t ood_candidates);

/// Union-find merge of every pair with cosine >= sim_threshold. Each group is
/// named after its highest-count member (ties: lexicographically smallest);
/// groups with total count < min_count are discarded. Throws when nothing
/// survives.
PostLabelSpace MergeCategories(const std::map<std::string, std::int64_t>& category_counts,
                               double sim_threshold, std::int64_t min_count);

/// Number of groups before min_count filtering.
std::size_t CountMergedGroups(const std::map<std::string, std::int64_t>& category_counts,
                              double sim_threshold);

std::string BuildOodClassificationPrompt(const std::string& node_text, const PostLabelSpace& post,
                                         std::size_t text_budget = 4000,
                                         const PromptTemplates& t = PromptTemplates::Defaults());

/// Maps a free-text answer into the post space: exact match after
/// normalization, otherwise the label with the highest TF-IDF cosine (ties:
/// first in order).
std::string SnapToLabelSpace(const std::string& answer, const PostLabelSpace& post);

/// `[{"answer": <category>, "confidence": <x>}]` -> (answer, clamped confidence).
std::pair<std::string, double> ParseClassificationResponse(std::string_view raw);

class ClassifyOodError : public GatewayError {
 public:
  ClassifyOodError(const std::string& what, std::vector<OodAssignment> partial)
      : GatewayError(what), partial_(std::move(partial)) {}
  const std::vector<OodAssignment>& partial() const { return partial_; }

 private:
  std::vector<OodAssignment> partial_;
};

/// One gateway call per node, results sorted by node id.
std::vector<OodAssignment> ClassifyOod(const std::vector<NodeId>& node_ids, const Graph& g,
                                       const PostLabelSpace& post, LlmGateway& gateway,
                                       int max_parse_retries = 2, std::size_t text_budget = 4000,
                                       const PromptTemplates& t = PromptTemplates::Defaults());

/// Accuracy under the best injective mapping of predicted labels to true
/// classes (each true class receives at most one predicted label).
double ClusterAccuracy(const std::vector<OodAssignment>& assignments,
                       const std::map<NodeId, std::string>& true_labels);

/// Maximum-weight assignment on a rows x cols table (rectangular allowed).
/// Returns the matched total weight; `row_to_col` receives -1 for unmatched rows.
std::int64_t MaxWeightAssignment(const std::vector<std::vector<std::int64_t>>& table,
                                 std::vector<int>* row_to_col = nullptr);

void WritePostLabelSpace(const std::filesystem::path& path, const PostLabelSpace& post);
PostLabelSpace ReadPostLabelSpace(const std::filesystem::path& path);

void WriteAssignments(const std::filesystem::path& path, const std::vector<OodAssignment>& a);
std::vector<OodAssignment> ReadAssignments(const std::filesystem::path& path);

}  // namespace cfc
