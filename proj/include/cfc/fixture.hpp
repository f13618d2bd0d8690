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
#include <string>
#include <vector>

#include "cfc/graph.hpp"

namespace cfc {

// Synthetic text-attributed graph with a scripted mock LLM. Three ID topics
// and two OOD topics; OOD feature centers sit next to ID centers along an
// orthogonal direction, so max-probability thresholding cannot separate them.
struct FixtureOptions {
  int nodes_per_class = 100;     // ID topics
  int ood_nodes_per_class = 40;  // OOD topics stay a minority, as in citation benchmarks
  int feature_dim = 32;
  double intra_degree = 5.0;  // expected same-class neighbours, equal for every class
  double p_out = 0.002; // inter-class edge probability
  double noise = 1.0;
  double center_norm = 3.0;
  double ood_offset = 3.0;
  // Mock detector quality over the queried (val + test) nodes.
  double precision = 0.9;
  double recall = 0.8;
  std::uint64_t seed = 7;
  std::uint64_t split_seed = 7;
};

struct FixtureStats {
  std::int64_t queried_ood = 0;
  std::int64_t flagged_true = 0;
  std::int64_t flagged_false = 0;
};

const std::vector<std::string>& FixtureIdClasses();
const std::vector<std::string>& FixtureOodClasses();

Graph MakeFixtureGraph(const FixtureOptions& opt);

/// Writes nodes.jsonl, edges.jsonl, features.bin, mock.jsonl and config.json
/// (mock gateway, easy-reject) into `dir`.
FixtureStats WriteFixture(const std::filesystem::path& dir, const FixtureOptions& opt = {});

}  // namespace cfc
