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

#include <unistd.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "cfc/graph.hpp"
#include "cfc/random.hpp"

namespace cfc::testing {

class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("cfc-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline void WriteFile(const std::filesystem::path& p, const std::string& content) {
  std::ofstream out(p, std::ios::binary);
  out << content;
}

inline std::string ReadFile(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Erdos-Renyi graph without text or labels.
inline Graph RandomGraph(int n, double p, Rng& rng) {
  Graph g;
  g.num_nodes = n;
  g.node_text.assign(n, "");
  g.labels.assign(n, std::nullopt);
  std::vector<std::pair<NodeId, NodeId>> raw;
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      if (rng.Uniform01() < p) raw.emplace_back(i, j);
    }
  }
  g.edges = CanonicalEdges(n, raw);
  return g;
}

inline Graph GraphFromEdges(int n, const std::vector<std::pair<NodeId, NodeId>>& raw) {
  Graph g;
  g.num_nodes = n;
  g.node_text.assign(n, "");
  g.labels.assign(n, std::nullopt);
  g.edges = CanonicalEdges(n, raw);
  return g;
}

// Dense adjacency without self loops.
inline Matrix DenseAdjacency(const Graph& g) {
  Matrix a = Matrix::Zero(g.num_nodes, g.num_nodes);
  for (const auto& e : g.edges) a(e.src, e.dst) = a(e.dst, e.src) = 1.0;
  return a;
}

inline Matrix RandomMatrix(Eigen::Index r, Eigen::Index c, Rng& rng) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < r; ++i) {
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = rng.Uniform(-1.0, 1.0);
  }
  return m;
}

}  // namespace cfc::testing
