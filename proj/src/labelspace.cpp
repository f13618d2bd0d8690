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

#include "cfc/labelspace.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>

#include <nlohmann/json.hpp>

#include "cfc/parallel.hpp"

namespace cfc {
namespace {

using json = nlohmann::json;

class UnionFind {
 public:
  explicit UnionFind(std::size_t n) : parent_(n) { std::iota(parent_.begin(), parent_.end(), 0); }
  std::size_t Find(std::size_t x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }
  void Unite(std::size_t a, std::size_t b) {
    a = Find(a);
    b = Find(b);
    if (a != b) parent_[std::max(a, b)] = std::min(a, b);
  }

 private:
  std::vector<std::size_t> parent_;
};

struct Grouping {
  std::vector<std::string> names;  // normalized, sorted
  std::vector<std::int64_t> counts;
  std::vector<std::size_t> group_of;
};

Grouping GroupCategories(const std::map<std::string, std::int64_t>& category_counts,
                         double sim_threshold) {
  std::map<std::string, std::int64_t> normalized;
  for (const auto& [raw, count] : category_counts) {
    if (count < 0) throw ValidationError("negative category count for '" + raw + "'");
    normalized[NormalizeCategory(raw)] += count;
  }
  Grouping g;
  for (const auto& [name, count] : normalized) {
    g.names.push_back(name);
    g.counts.push_back(count);
  }
  const Matrix tfidf = TfidfVectors(g.names);
  UnionFind uf(g.names.size());
  for (std::size_t i = 0; i < g.names.size(); ++i) {
    for (std::size_t j = i + 1; j < g.names.size(); ++j) {
      const double sim = Cosine(tfidf.row(i).transpose(), tfidf.row(j).transpose());
      if (sim >= sim_threshold) uf.Unite(i, j);
    }
  }
  g.group_of.resize(g.names.size());
  for (std::size_t i = 0; i < g.names.size(); ++i) g.group_of[i] = uf.Find(i);
  return g;
}

std::string MatchKey(std::string_view s) {
  std::string out;
  for (const auto& tok : Tokenize(s)) {
    if (!out.empty()) out.push_back(' ');
    out += tok;
  }
  return out;
}

}  // namespace

std::vector<std::string> Tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string cur;
  for (const char c : text) {
    if (std::isalnum(static_cast<unsigned char>(c))) {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    } else if (!cur.empty()) {
      tokens.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return tokens;
}

Matrix TfidfVectors(const std::vector<std::string>& categories) {
  if (categories.empty()) throw ValidationError("TF-IDF over an empty category list");
  std::map<std::string, Eigen::Index> vocab;
  std::vector<std::map<std::string, double>> tf(categories.size());
  for (std::size_t i = 0; i < categories.size(); ++i) {
    for (auto& tok : Tokenize(categories[i])) {
      tf[i][tok] += 1.0;
      vocab.emplace(tok, 0);
    }
  }
  Eigen::Index next = 0;
  for (auto& [tok, idx] : vocab) idx = next++;

  std::vector<double> df(vocab.size(), 0.0);
  for (const auto& row : tf) {
    for (const auto& [tok, _] : row) df[vocab[tok]] += 1.0;
  }
  const double n = static_cast<double>(categories.size());
  Matrix m = Matrix::Zero(static_cast<Eigen::Index>(categories.size()), std::max<Eigen::Index>(next, 1));
  for (std::size_t i = 0; i < tf.size(); ++i) {
    for (const auto& [tok, count] : tf[i]) {
      const auto j = vocab[tok];
      m(static_cast<Eigen::Index>(i), j) = count * (std::log((1.0 + n) / (1.0 + df[j])) + 1.0);
    }
    const double norm = m.row(static_cast<Eigen::Index>(i)).norm();
    if (norm > 0.0) m.row(static_cast<Eigen::Index>(i)) /= norm;
  }
  return m;
}

double Cosine(const Vector& u, const Vector& v) {
  if (u.size() != v.size()) throw DimensionError("cosine of vectors with different lengths");
  const double nu = u.norm();
  const double nv = v.norm();
  if (nu == 0.0 || nv == 0.0) return 0.0;
  return u.dot(v) / (nu * nv);
}

std::int64_t DefaultMinCount(std::int64_t ood_candidates) {
  const auto one_percent = (std::max<std::int64_t>(ood_candidates, 0) + 99) / 100;
  return std::max<std::int64_t>(2, one_percent);
}

std::size_t CountMergedGroups(const std::map<std::string, std::int64_t>& category_counts,
                              double sim_threshold) {
  if (category_counts.empty()) return 0;
  const auto g = GroupCategories(category_counts, sim_threshold);
  return std::set<std::size_t>(g.group_of.begin(), g.group_of.end()).size();
}

PostLabelSpace MergeCategories(const std::map<std::string, std::int64_t>& category_counts,
                               double sim_threshold, std::int64_t min_count) {
  if (category_counts.empty()) throw ValidationError("no categories to merge");
  const auto g = GroupCategories(category_counts, sim_threshold);

  struct GroupInfo {
    std::int64_t total = 0;
    std::size_t rep = 0;
    bool has_rep = false;
  };
  std::map<std::size_t, GroupInfo> groups;
  for (std::size_t i = 0; i < g.names.size(); ++i) {
    auto& info = groups[g.group_of[i]];
    info.total += g.counts[i];
    // names are sorted, so the first of equal counts is the lexicographic minimum
    if (!info.has_rep || g.counts[i] > g.counts[info.rep]) {
      info.rep = i;
      info.has_rep = true;
    }
  }

  PostLabelSpace post;
  post.min_count = min_count;
  post.sim_threshold = sim_threshold;
  std::vector<std::pair<std::int64_t, std::string>> kept;
  std::map<std::size_t, std::optional<std::string>> group_label;
  for (const auto& [root, info] : groups) {
    if (info.total >= min_count) {
      kept.emplace_back(info.total, g.names[info.rep]);
      group_label[root] = g.names[info.rep];
      post.label_counts[g.names[info.rep]] = info.total;
    } else {
      group_label[root] = std::nullopt;
    }
  }
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  });
  for (const auto& [_, label] : kept) post.merged_labels.push_back(label);

  std::map<std::string, std::size_t> index_of;
  for (std::size_t i = 0; i < g.names.size(); ++i) index_of[g.names[i]] = i;
  for (const auto& [raw, _] : category_counts) {
    post.raw_to_merged[raw] = group_label[g.group_of[index_of[NormalizeCategory(raw)]]];
  }
  if (post.merged_labels.empty()) {
    throw ValidationError("empty post-OOD label space: every category group fell below min_count " +
                          std::to_string(min_count));
  }
  return post;
}

std::string BuildOodClassificationPrompt(const std::string& node_text, const PostLabelSpace& post,
                                         std::size_t text_budget, const PromptTemplates& t) {
  if (post.empty()) throw ValidationError("empty post-OOD label space");
  if (node_text.empty()) throw ValidationError("empty node text");
  return RenderTemplate(t.ood_classification, {{"TEXT", TruncateText(node_text, text_budget)},
                                               {"OOD_LABELS", RenderLabelList(post.merged_labels)}});
}

std::string SnapToLabelSpace(const std::string& answer, const PostLabelSpace& post) {
  if (post.empty()) throw ValidationError("empty post-OOD label space");
  const auto key = MatchKey(answer);
  for (const auto& l : post.merged_labels) {
    if (MatchKey(l) == key) return l;
  }
  std::vector<std::string> corpus(post.merged_labels);
  corpus.push_back(answer);
  const Matrix tfidf = TfidfVectors(corpus);
  const Vector query = tfidf.row(tfidf.rows() - 1).transpose();
  std::size_t best = 0;
  double best_sim = -1.0;
  for (std::size_t i = 0; i < post.merged_labels.size(); ++i) {
    const double sim = Cosine(tfidf.row(static_cast<Eigen::Index>(i)).transpose(), query);
    if (sim > best_sim) {
      best_sim = sim;
      best = i;
    }
  }
  return post.merged_labels[best];
}

std::pair<std::string, double> ParseClassificationResponse(std::string_view raw) {
  auto j = ExtractFirstJson(raw);
  if (!j) throw ParseError("no JSON found in response");
  json record = *j;
  if (record.is_array()) {
    if (record.empty() || !record[0].is_object()) throw ParseError("response array holds no object");
    record = record[0];
  }
  if (!record.is_object() || !record.contains("answer") || !record["answer"].is_string()) {
    throw ParseError("missing \"answer\" field");
  }
  double conf = 0.0;
  if (record.contains("confidence")) {
    const auto& c = record["confidence"];
    if (c.is_number()) {
      conf = c.get<double>();
    } else if (c.is_string()) {
      try {
        conf = std::stod(c.get<std::string>());
      } catch (const std::exception&) {
        conf = 0.0;
      }
    }
  }
  if (std::isnan(conf)) conf = 0.0;
  return {record["answer"].get<std::string>(), std::clamp(conf, 0.0, 1.0)};
}

std::vector<OodAssignment> ClassifyOod(const std::vector<NodeId>& node_ids, const Graph& g,
                                       const PostLabelSpace& post, LlmGateway& gateway,
                                       int max_parse_retries, std::size_t text_budget,
                                       const PromptTemplates& t) {
  if (post.empty()) throw ValidationError("empty post-OOD label space");
  std::vector<NodeId> ids(node_ids);
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());

  std::vector<std::optional<OodAssignment>> slots(ids.size());
  auto classify = [&](std::size_t i) {
    OodAssignment a;
    a.node_id = ids[i];
    a.predicted_label = post.merged_labels.front();
    const auto& text = g.node_text.at(static_cast<std::size_t>(a.node_id));
    if (!text.empty()) {
      const auto prompt = BuildOodClassificationPrompt(text, post, text_budget, t);
      for (int attempt = 0; attempt <= max_parse_retries; ++attempt) {
        a.raw_response = gateway.Complete(prompt).response_text;
        try {
          const auto [answer, conf] = ParseClassificationResponse(a.raw_response);
          a.predicted_label = SnapToLabelSpace(answer, post);
          a.confidence = conf;
          break;
        } catch (const ParseError&) {
        }
      }
    }
    slots[i] = std::move(a);
  };

  std::string failure;
  try {
    ParallelFor(ids.size(), static_cast<std::size_t>(gateway.config().max_concurrent), classify);
  } catch (const GatewayError& e) {
    failure = e.what();
  }
  std::vector<OodAssignment> out;
  for (auto& s : slots) {
    if (s) out.push_back(std::move(*s));
  }
  if (!failure.empty()) throw ClassifyOodError("OOD classification aborted: " + failure, std::move(out));
  return out;
}

// ---------------------------------------------------------------------------
// Cluster accuracy

std::int64_t MaxWeightAssignment(const std::vector<std::vector<std::int64_t>>& table,
                                 std::vector<int>* row_to_col) {
  const std::size_t rows = table.size();
  const std::size_t cols = rows ? table[0].size() : 0;
  const std::size_t n = std::max(rows, cols);
  if (row_to_col) row_to_col->assign(rows, -1);
  if (n == 0) return 0;
  std::int64_t max_w = 0;
  for (const auto& r : table) {
    if (r.size() != cols) throw DimensionError("ragged assignment table");
    for (const auto w : r) max_w = std::max(max_w, w);
  }
  auto cost = [&](std::size_t i, std::size_t j) -> std::int64_t {
    const std::int64_t w = (i < rows && j < cols) ? table[i][j] : 0;
    return max_w - w;
  };

  // Hungarian method with potentials, 1-based.
  constexpr std::int64_t kInf = std::numeric_limits<std::int64_t>::max() / 4;
  std::vector<std::int64_t> u(n + 1, 0), v(n + 1, 0);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<std::int64_t> minv(n + 1, kInf);
    std::vector<bool> used(n + 1, false);
    do {
      used[j0] = true;
      const std::size_t i0 = p[j0];
      std::int64_t delta = kInf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const std::int64_t cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }

  std::int64_t total = 0;
  for (std::size_t j = 1; j <= n; ++j) {
    const std::size_t i = p[j];
    if (i == 0 || i > rows || j > cols) continue;
    total += table[i - 1][j - 1];
    if (row_to_col) (*row_to_col)[i - 1] = static_cast<int>(j - 1);
  }
  return total;
}

double ClusterAccuracy(const std::vector<OodAssignment>& assignments,
                       const std::map<NodeId, std::string>& true_labels) {
  if (assignments.empty()) throw ValidationError("cluster accuracy of an empty assignment list");
  std::map<std::string, std::size_t> pred_idx, true_idx;
  for (const auto& a : assignments) {
    const auto it = true_labels.find(a.node_id);
    if (it == true_labels.end()) {
      throw ValidationError("node " + std::to_string(a.node_id) + " has no true OOD label");
    }
    pred_idx.emplace(a.predicted_label, 0);
    true_idx.emplace(it->second, 0);
  }
  std::size_t k = 0;
  for (auto& [_, i] : pred_idx) i = k++;
  k = 0;
  for (auto& [_, i] : true_idx) i = k++;
  std::vector<std::vector<std::int64_t>> table(pred_idx.size(),
                                               std::vector<std::int64_t>(true_idx.size(), 0));
  for (const auto& a : assignments) {
    ++table[pred_idx[a.predicted_label]][true_idx[true_labels.at(a.node_id)]];
  }
  const auto matched = MaxWeightAssignment(table);
  return static_cast<double>(matched) / static_cast<double>(assignments.size());
}

// ---------------------------------------------------------------------------
// Persistence

void WritePostLabelSpace(const std::filesystem::path& path, const PostLabelSpace& post) {
  json raw = json::object();
  for (const auto& [k, v] : post.raw_to_merged) raw[k] = v ? json(*v) : json(nullptr);
  const json j = {{"merged_labels", post.merged_labels},
                  {"label_counts", post.label_counts},
                  {"raw_to_merged", raw},
                  {"sim_threshold", post.sim_threshold},
                  {"min_count", post.min_count}};
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

PostLabelSpace ReadPostLabelSpace(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  const auto j = json::parse(in);
  PostLabelSpace post;
  post.merged_labels = j.at("merged_labels").get<std::vector<std::string>>();
  post.label_counts = j.value("label_counts", std::map<std::string, std::int64_t>{});
  for (const auto& [k, v] : j.at("raw_to_merged").items()) {
    post.raw_to_merged[k] = v.is_null() ? std::nullopt : std::optional<std::string>(v.get<std::string>());
  }
  post.sim_threshold = j.at("sim_threshold").get<double>();
  post.min_count = j.at("min_count").get<std::int64_t>();
  return post;
}

void WriteAssignments(const std::filesystem::path& path, const std::vector<OodAssignment>& a) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& x : a) {
    out << json{{"node_id", x.node_id},
                {"predicted_label", x.predicted_label},
                {"confidence", x.confidence},
                {"raw_response", x.raw_response}}
               .dump()
        << '\n';
  }
}

std::vector<OodAssignment> ReadAssignments(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  std::vector<OodAssignment> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto r = json::parse(line);
    out.push_back({r.at("node_id").get<NodeId>(), r.at("predicted_label").get<std::string>(),
                   r.at("confidence").get<double>(), r.value("raw_response", std::string())});
  }
  return out;
}

}  // namespace cfc
