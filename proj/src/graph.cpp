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

#include "cfc/graph.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "cfc/random.hpp"

namespace cfc {
namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little,
              "binary matrix I/O assumes a little-endian host");

constexpr char kFeatureMagic[4] = {'C', 'F', 'C', 'F'};

std::string LineContext(const fs::path& path, std::size_t line_no) {
  return path.string() + ":" + std::to_string(line_no);
}

template <typename Fn>
void ForEachJsonLine(const fs::path& path, Fn&& fn) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json record;
    try {
      record = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ValidationError("malformed record at " + LineContext(path, line_no) + ": " + e.what());
    }
    if (!record.is_object()) {
      throw ValidationError("malformed record at " + LineContext(path, line_no) +
                            ": expected an object");
    }
    try {
      fn(record, line_no);
    } catch (const json::exception& e) {
      throw ValidationError("malformed record at " + LineContext(path, line_no) + ": " + e.what());
    }
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// SparseMatrix

SparseMatrix::SparseMatrix(std::int64_t rows, std::int64_t cols)
    : rows_(rows), cols_(cols), offsets_(static_cast<std::size_t>(rows) + 1, 0) {
  if (rows < 0 || cols < 0) throw DimensionError("negative sparse matrix shape");
}

SparseMatrix SparseMatrix::FromTriplets(std::int64_t rows, std::int64_t cols,
                                        std::vector<Triplet> triplets) {
  SparseMatrix m(rows, cols);
  for (const auto& t : triplets) {
    if (t.row < 0 || t.row >= rows || t.col < 0 || t.col >= cols) {
      throw DimensionError("triplet (" + std::to_string(t.row) + ", " + std::to_string(t.col) +
                           ") outside " + std::to_string(rows) + "x" + std::to_string(cols));
    }
  }
  std::sort(triplets.begin(), triplets.end(), [](const Triplet& a, const Triplet& b) {
    return a.row != b.row ? a.row < b.row : a.col < b.col;
  });
  std::size_t i = 0;
  while (i < triplets.size()) {
    const auto row = triplets[i].row;
    const auto col = triplets[i].col;
    double sum = 0.0;
    while (i < triplets.size() && triplets[i].row == row && triplets[i].col == col) {
      sum += triplets[i].value;
      ++i;
    }
    if (sum != 0.0) {
      m.cols_idx_.push_back(col);
      m.values_.push_back(sum);
      ++m.offsets_[static_cast<std::size_t>(row) + 1];
    }
  }
  for (std::size_t r = 0; r < static_cast<std::size_t>(rows); ++r) {
    m.offsets_[r + 1] += m.offsets_[r];
  }
  return m;
}

SparseMatrix SparseMatrix::Identity(std::int64_t n) {
  std::vector<Triplet> t;
  t.reserve(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) t.push_back({i, i, 1.0});
  return FromTriplets(n, n, std::move(t));
}

double SparseMatrix::At(std::int64_t row, std::int64_t col) const {
  const auto begin = cols_idx_.begin() + offsets_[row];
  const auto end = cols_idx_.begin() + offsets_[row + 1];
  const auto it = std::lower_bound(begin, end, col);
  if (it == end || *it != col) return 0.0;
  return values_[static_cast<std::size_t>(it - cols_idx_.begin())];
}

double SparseMatrix::RowSum(std::int64_t row) const {
  double s = 0.0;
  for (auto k = offsets_[row]; k < offsets_[row + 1]; ++k) s += values_[k];
  return s;
}

Matrix SparseMatrix::ToDense() const {
  Matrix d = Matrix::Zero(rows_, cols_);
  for (std::int64_t r = 0; r < rows_; ++r) {
    for (auto k = offsets_[r]; k < offsets_[r + 1]; ++k) d(r, cols_idx_[k]) = values_[k];
  }
  return d;
}

Matrix Spmm(const SparseMatrix& m, const Matrix& dense) {
  if (m.cols() != dense.rows()) {
    throw DimensionError("spmm: sparse is " + std::to_string(m.rows()) + "x" +
                         std::to_string(m.cols()) + " but dense has " +
                         std::to_string(dense.rows()) + " rows");
  }
  Matrix out = Matrix::Zero(m.rows(), dense.cols());
  const auto& off = m.row_offsets();
  const auto& col = m.col_indices();
  const auto& val = m.values();
  for (std::int64_t r = 0; r < m.rows(); ++r) {
    for (auto k = off[r]; k < off[r + 1]; ++k) {
      out.row(r) += val[k] * dense.row(col[k]);
    }
  }
  return out;
}

Matrix SpmmTransposed(const SparseMatrix& m, const Matrix& dense) {
  if (m.rows() != dense.rows()) {
    throw DimensionError("spmm^T: sparse has " + std::to_string(m.rows()) + " rows but dense has " +
                         std::to_string(dense.rows()));
  }
  Matrix out = Matrix::Zero(m.cols(), dense.cols());
  const auto& off = m.row_offsets();
  const auto& col = m.col_indices();
  const auto& val = m.values();
  for (std::int64_t r = 0; r < m.rows(); ++r) {
    for (auto k = off[r]; k < off[r + 1]; ++k) {
      out.row(col[k]) += val[k] * dense.row(r);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Graph

void Graph::Validate() const {
  if (num_nodes < 0) throw ValidationError("negative node count");
  const auto n = static_cast<std::size_t>(num_nodes);
  if (node_text.size() != n) throw ValidationError("node_text size differs from node count");
  if (labels.size() != n) throw ValidationError("labels size differs from node count");
  std::set<std::pair<NodeId, NodeId>> seen;
  for (const auto& e : edges) {
    if (e.src < 0 || e.dst < 0 || e.src >= num_nodes || e.dst >= num_nodes) {
      throw ValidationError("unknown node id in edge (" + std::to_string(e.src) + ", " +
                            std::to_string(e.dst) + ")");
    }
    if (e.src >= e.dst) throw ValidationError("edge not canonical or self-loop");
    if (!seen.insert({e.src, e.dst}).second) throw ValidationError("duplicate edge");
  }
  if (has_features()) {
    if (features.rows() != num_nodes) {
      throw ValidationError("feature row count " + std::to_string(features.rows()) +
                            " differs from node count " + std::to_string(num_nodes));
    }
    if (features.cols() < 1) throw ValidationError("feature dimension must be >= 1");
  }
  std::set<std::string> classes(class_names.begin(), class_names.end());
  for (const auto& l : labels) {
    if (l && !classes.count(*l)) throw ValidationError("label '" + *l + "' not in class_names");
  }
}

std::vector<Edge> CanonicalEdges(std::int64_t num_nodes,
                                 const std::vector<std::pair<NodeId, NodeId>>& raw) {
  std::set<std::pair<NodeId, NodeId>> unique;
  for (const auto& [a, b] : raw) {
    if (a < 0 || b < 0 || a >= num_nodes || b >= num_nodes) {
      throw ValidationError("unknown node id in edge (" + std::to_string(a) + ", " +
                            std::to_string(b) + ")");
    }
    if (a == b) continue;
    unique.insert({std::min(a, b), std::max(a, b)});
  }
  std::vector<Edge> out;
  out.reserve(unique.size());
  for (const auto& [a, b] : unique) out.push_back({a, b});
  return out;
}

Graph LoadGraph(const fs::path& nodes_path, const fs::path& edges_path,
                const std::optional<fs::path>& features_path) {
  struct NodeRecord {
    std::string text;
    std::optional<std::string> label;
  };
  std::map<NodeId, NodeRecord> records;
  ForEachJsonLine(nodes_path, [&](const json& r, std::size_t line_no) {
    const NodeId id = r.at("id").get<NodeId>();
    NodeRecord rec;
    if (r.contains("text") && !r["text"].is_null()) rec.text = r["text"].get<std::string>();
    if (r.contains("label") && !r["label"].is_null()) rec.label = r["label"].get<std::string>();
    if (!records.emplace(id, std::move(rec)).second) {
      throw ValidationError("duplicate node id " + std::to_string(id) + " at " +
                            LineContext(nodes_path, line_no));
    }
  });

  Graph g;
  g.num_nodes = static_cast<std::int64_t>(records.size());
  std::set<std::string> classes;
  NodeId expected = 0;
  for (auto& [id, rec] : records) {
    if (id != expected) {
      throw ValidationError("node ids must be dense 0..N-1; missing id " + std::to_string(expected));
    }
    ++expected;
    g.node_text.push_back(std::move(rec.text));
    if (rec.label) classes.insert(*rec.label);
    g.labels.push_back(std::move(rec.label));
  }
  g.class_names.assign(classes.begin(), classes.end());

  std::vector<std::pair<NodeId, NodeId>> raw;
  ForEachJsonLine(edges_path, [&](const json& r, std::size_t line_no) {
    const NodeId s = r.at("src").get<NodeId>();
    const NodeId d = r.at("dst").get<NodeId>();
    if (s < 0 || d < 0 || s >= g.num_nodes || d >= g.num_nodes) {
      throw ValidationError("unknown node id in edge (" + std::to_string(s) + ", " +
                            std::to_string(d) + ") at " + LineContext(edges_path, line_no));
    }
    raw.emplace_back(s, d);
  });
  g.edges = CanonicalEdges(g.num_nodes, raw);

  if (features_path) g.features = LoadFeatures(*features_path, g.num_nodes);
  g.Validate();
  return g;
}

void SaveNodes(const Graph& g, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  for (std::int64_t i = 0; i < g.num_nodes; ++i) {
    json r;
    r["id"] = i;
    r["text"] = g.node_text[i];
    r["label"] = g.labels[i] ? json(*g.labels[i]) : json(nullptr);
    out << r.dump() << '\n';
  }
}

void SaveEdges(const Graph& g, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& e : g.edges) out << json{{"src", e.src}, {"dst", e.dst}}.dump() << '\n';
}

void WriteMatrixBinary(const fs::path& path, const Matrix& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  const auto rows = static_cast<std::uint32_t>(m.rows());
  const auto cols = static_cast<std::uint32_t>(m.cols());
  out.write(kFeatureMagic, 4);
  out.write(reinterpret_cast<const char*>(&rows), sizeof rows);
  out.write(reinterpret_cast<const char*>(&cols), sizeof cols);
  out.write(reinterpret_cast<const char*>(m.data()),
            static_cast<std::streamsize>(sizeof(double) * m.size()));
}

Matrix ReadMatrixBinary(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path.string());
  char magic[4];
  std::uint32_t rows = 0, cols = 0;
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(&rows), sizeof rows);
  in.read(reinterpret_cast<char*>(&cols), sizeof cols);
  if (!in || std::memcmp(magic, kFeatureMagic, 4) != 0) {
    throw ValidationError(path.string() + ": bad matrix header");
  }
  Matrix m(rows, cols);
  in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(sizeof(double) * m.size()));
  if (!in) throw ValidationError(path.string() + ": truncated matrix payload");
  return m;
}

Matrix LoadFeatures(const fs::path& path, std::int64_t expected_rows) {
  Matrix m;
  {
    std::ifstream probe(path, std::ios::binary);
    if (!probe) throw ValidationError("cannot open " + path.string());
    char magic[4] = {};
    probe.read(magic, 4);
    if (probe && std::memcmp(magic, kFeatureMagic, 4) == 0) {
      m = ReadMatrixBinary(path);
    } else {
      std::map<NodeId, std::vector<double>> rows;
      ForEachJsonLine(path, [&](const json& r, std::size_t line_no) {
        const NodeId id = r.at("id").get<NodeId>();
        if (!rows.emplace(id, r.at("vec").get<std::vector<double>>()).second) {
          throw ValidationError("duplicate feature id at " + LineContext(path, line_no));
        }
      });
      const std::size_t d = rows.empty() ? 0 : rows.begin()->second.size();
      m = Matrix(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(d));
      NodeId expected = 0;
      for (const auto& [id, vec] : rows) {
        if (id != expected) throw ValidationError("feature ids must be dense 0..N-1");
        if (vec.size() != d) throw ValidationError("ragged feature rows in " + path.string());
        for (std::size_t j = 0; j < d; ++j) m(id, static_cast<Eigen::Index>(j)) = vec[j];
        ++expected;
      }
    }
  }
  if (expected_rows >= 0 && m.rows() != expected_rows) {
    throw ValidationError("feature row count " + std::to_string(m.rows()) + " != N = " +
                          std::to_string(expected_rows));
  }
  if (m.cols() < 1) throw ValidationError("feature dimension must be >= 1");
  return m;
}

// ---------------------------------------------------------------------------
// Normalizations

SparseMatrix SymNormalizeAdjacency(const Graph& g) {
  const auto n = g.num_nodes;
  std::vector<double> degree(static_cast<std::size_t>(n), 1.0);
  for (const auto& e : g.edges) {
    degree[e.src] += 1.0;
    degree[e.dst] += 1.0;
  }
  std::vector<SparseMatrix::Triplet> t;
  t.reserve(static_cast<std::size_t>(n) + 2 * g.edges.size());
  for (std::int64_t i = 0; i < n; ++i) t.push_back({i, i, 1.0 / degree[i]});
  for (const auto& e : g.edges) {
    // Same expression for both orientations keeps the matrix exactly symmetric.
    const double v = 1.0 / std::sqrt(degree[e.src] * degree[e.dst]);
    t.push_back({e.src, e.dst, v});
    t.push_back({e.dst, e.src, v});
  }
  return SparseMatrix::FromTriplets(n, n, std::move(t));
}

SparseMatrix RwNormalizeAdjacency(const Graph& g) {
  const auto n = g.num_nodes;
  std::vector<double> degree(static_cast<std::size_t>(n), 0.0);
  for (const auto& e : g.edges) {
    degree[e.src] += 1.0;
    degree[e.dst] += 1.0;
  }
  std::vector<SparseMatrix::Triplet> t;
  t.reserve(2 * g.edges.size());
  for (const auto& e : g.edges) {
    t.push_back({e.src, e.dst, 1.0 / degree[e.src]});
    t.push_back({e.dst, e.src, 1.0 / degree[e.dst]});
  }
  return SparseMatrix::FromTriplets(n, n, std::move(t));
}

// ---------------------------------------------------------------------------
// Splits

SplitAssignment SplitDataset(const Graph& g, const std::vector<std::string>& id_classes,
                             const std::vector<std::string>& ood_classes, std::uint64_t seed,
                             double train_frac, double val_frac) {
  if (!(train_frac > 0.0 && train_frac < 1.0)) throw ValidationError("train_frac must be in (0,1)");
  if (!(val_frac >= 0.0 && val_frac <= 1.0)) throw ValidationError("val_frac must be in [0,1]");
  std::set<std::string> id_set(id_classes.begin(), id_classes.end());
  std::set<std::string> ood_set(ood_classes.begin(), ood_classes.end());
  for (const auto& c : id_set) {
    if (ood_set.count(c)) throw ValidationError("class '" + c + "' is both ID and OOD");
  }

  // Classes are visited in sorted order so the RNG stream is input-order independent.
  std::map<std::string, std::vector<NodeId>> by_class;
  for (const auto& c : id_set) by_class[c];
  for (const auto& c : ood_set) by_class[c];
  for (std::int64_t i = 0; i < g.num_nodes; ++i) {
    if (!g.labels[i]) continue;
    const auto it = by_class.find(*g.labels[i]);
    if (it == by_class.end()) {
      throw ValidationError("label '" + *g.labels[i] + "' is neither ID nor OOD");
    }
    it->second.push_back(i);
  }

  Rng rng(seed);
  SplitAssignment s;
  s.id_classes.assign(id_set.begin(), id_set.end());
  s.ood_classes.assign(ood_set.begin(), ood_set.end());
  for (auto& [cls, members] : by_class) {
    rng.Shuffle(std::span<NodeId>(members));
    std::size_t pos = 0;
    if (id_set.count(cls)) {
      if (members.size() < 2) {
        throw ValidationError("ID class '" + cls + "' has fewer than 2 nodes; cannot stratify");
      }
      auto n_train = static_cast<std::size_t>(std::floor(train_frac * members.size() + 0.5));
      n_train = std::clamp<std::size_t>(n_train, 1, members.size() - 1);
      s.train_ids.insert(s.train_ids.end(), members.begin(), members.begin() + n_train);
      pos = n_train;
    }
    const std::size_t pool = members.size() - pos;
    const auto n_val = std::min(pool, static_cast<std::size_t>(std::floor(val_frac * pool + 0.5)));
    s.val_ids.insert(s.val_ids.end(), members.begin() + pos, members.begin() + pos + n_val);
    s.test_ids.insert(s.test_ids.end(), members.begin() + pos + n_val, members.end());
  }
  std::sort(s.train_ids.begin(), s.train_ids.end());
  std::sort(s.val_ids.begin(), s.val_ids.end());
  std::sort(s.test_ids.begin(), s.test_ids.end());
  return s;
}

}  // namespace cfc
