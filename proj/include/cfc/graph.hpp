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
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cfc/common.hpp"

namespace cfc {

/// Compressed sparse row matrix. Column indices are strictly increasing within
/// a row and no explicit zeros are stored.
class SparseMatrix {
 public:
  struct Triplet {
    std::int64_t row;
    std::int64_t col;
    double value;
  };

  SparseMatrix() = default;
  SparseMatrix(std::int64_t rows, std::int64_t cols);

  /// Builds from unordered triplets. Duplicates are summed, zeros dropped.
  static SparseMatrix FromTriplets(std::int64_t rows, std::int64_t cols,
                                   std::vector<Triplet> triplets);
  static SparseMatrix Identity(std::int64_t n);

  std::int64_t rows() const { return rows_; }
  std::int64_t cols() const { return cols_; }
  std::int64_t nnz() const { return static_cast<std::int64_t>(values_.size()); }

  const std::vector<std::int64_t>& row_offsets() const { return offsets_; }
  const std::vector<std::int64_t>& col_indices() const { return cols_idx_; }
  const std::vector<double>& values() const { return values_; }

  /// Value at (row, col); zero when not stored.
  double At(std::int64_t row, std::int64_t col) const;
  double RowSum(std::int64_t row) const;
  Matrix ToDense() const;

 private:
  std::int64_t rows_ = 0;
  std::int64_t cols_ = 0;
  std::vector<std::int64_t> offsets_{0};
  std::vector<std::int64_t> cols_idx_;
  std::vector<double> values_;
};

/// Sparse-dense product. Each output row is accumulated in column order, so
/// the result is independent of scheduling.
Matrix Spmm(const SparseMatrix& m, const Matrix& dense);

/// m^T * dense, scattering row by row in stored order.
Matrix SpmmTransposed(const SparseMatrix& m, const Matrix& dense);

struct Edge {
  NodeId src;
  NodeId dst;
  friend bool operator==(const Edge&, const Edge&) = default;
};

/// Text-attributed graph. Edges are undirected, stored once with src < dst.
struct Graph {
  std::int64_t num_nodes = 0;
  std::vector<Edge> edges;
  Matrix features;  // N x d, may be empty until embeddings are supplied
  std::vector<std::string> node_text;
  std::vector<std::optional<std::string>> labels;
  std::vector<std::string> class_names;  // sorted, distinct

  /// Checks every structural invariant; throws ValidationError.
  void Validate() const;
  bool has_features() const { return features.rows() > 0; }
};

/// Canonicalizes (src < dst), drops self-loops and duplicates. Throws on
/// endpoints outside [0, num_nodes).
std::vector<Edge> CanonicalEdges(std::int64_t num_nodes,
                                 const std::vector<std::pair<NodeId, NodeId>>& raw);

Graph LoadGraph(const std::filesystem::path& nodes_path,
                const std::filesystem::path& edges_path,
                const std::optional<std::filesystem::path>& features_path = std::nullopt);

void SaveNodes(const Graph& g, const std::filesystem::path& path);
void SaveEdges(const Graph& g, const std::filesystem::path& path);

/// Reads a feature file, binary ("CFCF" header) or JSONL, detected by magic.
Matrix LoadFeatures(const std::filesystem::path& path, std::int64_t expected_rows = -1);

/// Binary matrix container: "CFCF", u32 rows, u32 cols, rows*cols float64
/// little-endian row-major.
void WriteMatrixBinary(const std::filesystem::path& path, const Matrix& m);
Matrix ReadMatrixBinary(const std::filesystem::path& path);

/// D^-1/2 (A + I) D^-1/2 with degrees counted after adding self-loops.
SparseMatrix SymNormalizeAdjacency(const Graph& g);

/// D^-1 A without self-loops. Isolated nodes get an all-zero row.
SparseMatrix RwNormalizeAdjacency(const Graph& g);

struct SplitAssignment {
  std::vector<NodeId> train_ids;
  std::vector<NodeId> val_ids;
  std::vector<NodeId> test_ids;
  std::vector<std::string> id_classes;
  std::vector<std::string> ood_classes;
};

/// Stratified split. train_frac of every ID class goes to train; the rest of
/// the ID nodes and all OOD nodes are split val_frac / (1 - val_frac), also
/// stratified per class. Output id lists are sorted ascending.
SplitAssignment SplitDataset(const Graph& g, const std::vector<std::string>& id_classes,
                             const std::vector<std::string>& ood_classes, std::uint64_t seed,
                             double train_frac = 0.5, double val_frac = 0.4);

}  // namespace cfc
