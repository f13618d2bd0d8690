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

#include "cfc/coarse.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "cfc/parallel.hpp"
#include "cfc/random.hpp"

namespace cfc {
namespace {

using json = nlohmann::json;

json FirstRecord(std::string_view raw) {
  auto j = ExtractFirstJson(raw);
  if (!j) throw ParseError("no JSON found in response");
  if (j->is_array()) {
    if (j->empty() || !(*j)[0].is_object()) throw ParseError("response array holds no object");
    return (*j)[0];
  }
  if (!j->is_object()) throw ParseError("response JSON is not an object");
  return *j;
}

std::string AnswerString(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number() || v.is_boolean()) return v.dump();
  throw ParseError("answer is not a string");
}

double ParseConfidence(const json& record) {
  if (!record.contains("confidence")) return 0.0;
  const auto& c = record["confidence"];
  double v = 0.0;
  if (c.is_number()) {
    v = c.get<double>();
  } else if (c.is_string()) {
    try {
      v = std::stod(c.get<std::string>());
    } catch (const std::exception&) {
      v = 0.0;
    }
  }
  if (std::isnan(v)) return 0.0;
  return std::clamp(v, 0.0, 1.0);
}

std::set<std::string> NormalizedSet(const std::vector<std::string>& labels) {
  std::set<std::string> out;
  for (const auto& l : labels) out.insert(NormalizeCategory(l));
  return out;
}

}  // namespace

std::string ToString(RejectMode mode) {
  return mode == RejectMode::kEasy ? "easy_reject" : "hard_reject";
}

RejectMode ParseRejectMode(const std::string& s) {
  if (s == "easy_reject") return RejectMode::kEasy;
  if (s == "hard_reject") return RejectMode::kHard;
  throw ValidationError("unknown coarse mode '" + s + "' (expected easy_reject|hard_reject)");
}

void CoarseConfig::Validate() const {
  if (!(tau > 0.0 && tau <= 1.0)) throw ValidationError("coarse.tau must be in (0, 1]");
  if (candidate_count < 1) throw ValidationError("coarse.candidate_count must be >= 1");
  if (max_parse_retries < 0) throw ValidationError("coarse.max_parse_retries must be >= 0");
  if (node_budget && *node_budget < 1) throw ValidationError("coarse.node_budget must be >= 1");
  if (text_budget < 1) throw ValidationError("coarse.text_budget must be >= 1");
}

// ---------------------------------------------------------------------------
// Prompt builders

std::string BuildMajorCategoryPrompt(const std::vector<std::string>& id_labels,
                                     const PromptTemplates& t) {
  if (id_labels.empty()) throw ValidationError("major-category prompt needs at least one ID label");
  return RenderTemplate(t.major_category, {{"ID_LABELS", RenderLabelList(id_labels)}});
}

std::string BuildCandidateOodPrompt(const std::vector<std::string>& id_labels,
                                    const std::string& major_category, int n,
                                    const PromptTemplates& t) {
  if (n < 1) throw ValidationError("candidate count must be >= 1");
  if (NormalizeCategory(major_category).empty()) throw ValidationError("missing major category");
  return RenderTemplate(t.candidate_ood, {{"ID_LABELS", RenderLabelList(id_labels)},
                                          {"MAJOR_CATEGORY", major_category},
                                          {"N", std::to_string(n)},
                                          {"TOPIC_NOUN", n == 1 ? "topic" : "topics"}});
}

std::string BuildEasyRejectPrompt(const std::string& node_text,
                                  const std::vector<std::string>& id_labels,
                                  std::size_t text_budget, const PromptTemplates& t) {
  if (node_text.empty()) throw ValidationError("empty node text");
  return RenderTemplate(t.easy_reject, {{"TEXT", TruncateText(node_text, text_budget)},
                                        {"ID_LABELS", RenderLabelList(id_labels)}});
}

std::string BuildHardRejectPrompt(const std::string& node_text,
                                  const std::vector<std::string>& id_labels,
                                  const std::vector<std::string>& candidate_ood_labels,
                                  std::size_t text_budget, const PromptTemplates& t) {
  if (node_text.empty()) throw ValidationError("empty node text");
  if (candidate_ood_labels.empty()) throw ValidationError("empty candidate OOD label list");
  const auto id_norm = NormalizedSet(id_labels);
  for (const auto& c : candidate_ood_labels) {
    if (id_norm.count(NormalizeCategory(c))) {
      throw ValidationError("candidate overlaps ID space: '" + c + "'");
    }
  }
  return RenderTemplate(t.hard_reject, {{"TEXT", TruncateText(node_text, text_budget)},
                                        {"ID_LABELS", RenderLabelList(id_labels)},
                                        {"CANDIDATE_LABELS", RenderLabelList(candidate_ood_labels)}});
}

// ---------------------------------------------------------------------------
// Response parsing

DetectionVerdict ParseDetectionResponse(std::string_view raw) {
  const json record = FirstRecord(raw);
  if (!record.contains("answer")) throw ParseError("missing \"answer\" field");
  const auto& answer = record["answer"];
  DetectionVerdict v;
  if (answer.is_boolean()) {
    v.is_id = answer.get<bool>();
  } else if (answer.is_string()) {
    const auto s = NormalizeCategory(answer.get<std::string>());
    if (s == "true") {
      v.is_id = true;
    } else if (s == "false") {
      v.is_id = false;
    } else {
      throw ParseError("answer is neither True nor False: '" + answer.get<std::string>() + "'");
    }
  } else {
    throw ParseError("answer is neither True nor False");
  }
  v.confidence = ParseConfidence(record);
  if (record.contains("category") && record["category"].is_string()) {
    v.category = NormalizeCategory(record["category"].get<std::string>());
  }
  if (v.category.empty()) v.category = "unknown";
  return v;
}

std::string ParseMajorCategoryResponse(std::string_view raw) {
  const json record = FirstRecord(raw);
  if (!record.contains("answer")) throw ParseError("missing \"answer\" field");
  auto s = AnswerString(record["answer"]);
  if (NormalizeCategory(s).empty()) throw ParseError("empty major category");
  return s;
}

std::vector<std::string> ParseCandidateResponse(std::string_view raw) {
  auto j = ExtractFirstJson(raw);
  if (!j) throw ParseError("no JSON found in response");
  if (!j->is_array()) *j = json::array({*j});
  std::vector<std::string> out;
  for (const auto& item : *j) {
    if (item.is_object() && item.contains("answer")) {
      out.push_back(AnswerString(item["answer"]));
    } else if (item.is_string()) {
      out.push_back(item.get<std::string>());
    }
  }
  if (out.empty()) throw ParseError("no candidate answers in response");
  return out;
}

HardRejectSpace GenerateHardRejectSpace(const std::vector<std::string>& id_labels, int n,
                                        LlmGateway& gateway, const PromptTemplates& t) {
  HardRejectSpace space;
  space.major_category = ParseMajorCategoryResponse(
      gateway.Complete(BuildMajorCategoryPrompt(id_labels, t)).response_text);
  const auto answers = ParseCandidateResponse(
      gateway.Complete(BuildCandidateOodPrompt(id_labels, space.major_category, n, t)).response_text);
  const auto id_norm = NormalizedSet(id_labels);
  std::set<std::string> seen;
  for (const auto& a : answers) {
    const auto key = NormalizeCategory(a);
    if (key.empty() || id_norm.count(key) || !seen.insert(key).second) continue;
    space.candidate_ood_labels.push_back(a);
    if (static_cast<int>(space.candidate_ood_labels.size()) == n) break;
  }
  if (space.candidate_ood_labels.empty()) {
    throw ParseError("LLM produced no usable candidate OOD labels");
  }
  return space;
}

// ---------------------------------------------------------------------------
// Detection

void SummarizeCoarse(CoarseResult& result, double tau) {
  result.tau = tau;
  result.ood_ids.clear();
  result.category_log.clear();
  for (const auto& a : result.annotations) {
    if (!a.is_id && a.confidence >= tau) {
      result.ood_ids.push_back(a.node_id);
      ++result.category_log[a.category];
    }
  }
  std::sort(result.ood_ids.begin(), result.ood_ids.end());
}

CoarseResult CoarseDetect(const Graph& g, const std::vector<NodeId>& query_ids,
                          const std::vector<std::string>& id_labels, const CoarseConfig& cfg,
                          LlmGateway& gateway, const PromptTemplates& t,
                          std::optional<HardRejectSpace> hard_space) {
  cfg.Validate();
  std::vector<NodeId> queried(query_ids);
  std::sort(queried.begin(), queried.end());
  queried.erase(std::unique(queried.begin(), queried.end()), queried.end());
  for (const auto id : queried) {
    if (id < 0 || id >= g.num_nodes) throw ValidationError("query id out of range");
  }
  if (cfg.node_budget && *cfg.node_budget < static_cast<std::int64_t>(queried.size())) {
    Rng rng(cfg.seed);
    rng.Shuffle(std::span<NodeId>(queried));
    queried.resize(static_cast<std::size_t>(*cfg.node_budget));
    std::sort(queried.begin(), queried.end());
  }

  CoarseResult result;
  result.mode = cfg.mode;
  result.tau = cfg.tau;
  if (cfg.mode == RejectMode::kHard) {
    if (!hard_space) hard_space = GenerateHardRejectSpace(id_labels, cfg.candidate_count, gateway, t);
    result.major_category = hard_space->major_category;
    result.candidate_ood_labels = hard_space->candidate_ood_labels;
  }

  std::vector<std::optional<Annotation>> slots(queried.size());
  auto annotate = [&](std::size_t i) {
    Annotation a;
    a.node_id = queried[i];
    const auto& text = g.node_text[a.node_id];
    if (text.empty()) {
      slots[i] = a;  // nothing to ask about; fallback verdict
      return;
    }
    const std::string prompt =
        cfg.mode == RejectMode::kEasy
            ? BuildEasyRejectPrompt(text, id_labels, cfg.text_budget, t)
            : BuildHardRejectPrompt(text, id_labels, result.candidate_ood_labels, cfg.text_budget, t);
    for (int attempt = 0; attempt <= cfg.max_parse_retries; ++attempt) {
      a.raw_response = gateway.Complete(prompt).response_text;
      try {
        const auto v = ParseDetectionResponse(a.raw_response);
        a.is_id = v.is_id;
        a.confidence = v.confidence;
        a.category = v.category;
        a.parsed = true;
        break;
      } catch (const ParseError&) {
      }
    }
    slots[i] = std::move(a);
  };

  std::string failure;
  try {
    ParallelFor(queried.size(), static_cast<std::size_t>(gateway.config().max_concurrent), annotate);
  } catch (const GatewayError& e) {
    failure = e.what();
  }
  for (auto& s : slots) {
    if (s) result.annotations.push_back(std::move(*s));
  }
  SummarizeCoarse(result, cfg.tau);
  if (!failure.empty()) {
    throw CoarseDetectError("coarse detection aborted: " + failure, std::move(result));
  }
  return result;
}

// ---------------------------------------------------------------------------
// Persistence

void WriteCoarseResult(const std::filesystem::path& path, const CoarseResult& r) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  const json header = {{"mode", ToString(r.mode)},
                       {"tau", r.tau},
                       {"major_category", r.major_category},
                       {"candidate_ood_labels", r.candidate_ood_labels}};
  out << header.dump() << '\n';
  for (const auto& a : r.annotations) {
    const json rec = {{"node_id", a.node_id},       {"is_id", a.is_id},
                      {"confidence", a.confidence}, {"category", a.category},
                      {"raw_response", a.raw_response}, {"parsed", a.parsed}};
    out << rec.dump() << '\n';
  }
}

CoarseResult ReadCoarseResult(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  CoarseResult r;
  std::string line;
  if (!std::getline(in, line)) throw ValidationError(path.string() + ": missing header");
  try {
    const auto header = json::parse(line);
    r.mode = ParseRejectMode(header.at("mode").get<std::string>());
    r.tau = header.at("tau").get<double>();
    r.major_category = header.at("major_category").get<std::string>();
    r.candidate_ood_labels = header.at("candidate_ood_labels").get<std::vector<std::string>>();
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto rec = json::parse(line);
      Annotation a;
      a.node_id = rec.at("node_id").get<NodeId>();
      a.is_id = rec.at("is_id").get<bool>();
      a.confidence = rec.at("confidence").get<double>();
      a.category = rec.at("category").get<std::string>();
      a.raw_response = rec.at("raw_response").get<std::string>();
      a.parsed = rec.value("parsed", true);
      r.annotations.push_back(std::move(a));
    }
  } catch (const json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
  SummarizeCoarse(r, r.tau);
  return r;
}

}  // namespace cfc
