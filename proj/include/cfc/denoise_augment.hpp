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
#include <vector>

#include "cfc/graph.hpp"

namespace cfc {

// ---------------------------------------------------------------------------
// Denoising by clamped label propagation

/// N x (C+1) soft labels; column C is the OOD class.
struct LabelMatrix {
  Matrix values;
  std::vector<NodeId> clamp_ids;
  int class_count = 0;  // C, number of ID classes

  int ood_column() const { return class_count; }
};

struct PropagationConfig {
  int steps = 10;
  void Validate() const;
};

/// Initial labels: one-hot ID class for train nodes (clamped), one-hot OOD for
/// candidates (free), zero elsewhere.
LabelMatrix MakeInitialLabels(std::int64_t num_nodes, int class_count,
                              const std::vector<NodeId>& train_ids,
                              const std::vector<int>& train_classes,
                              const std::vector<NodeId>& ood_candidates);

/// Y <- (D^-1 A) Y for `steps` iterations; after every product the clamped
/// rows and the rows of isolated nodes are reset to their initial values.
LabelMatrix LabelPropagate(const SparseMatrix& rw_adj, const LabelMatrix& init,
                           const PropagationConfig& cfg);

struct DenoiseVerdict {
  NodeId node_id = 0;
  bool kept = false;
  int argmax = 0;
};

/// Per-candidate verdicts. A candidate survives iff the OOD column attains the
/// row maximum (ties keep it).
std::vector<DenoiseVerdict> DenoiseVerdicts(const LabelMatrix& propagated,
                                            const std::vector<NodeId>& candidates);

/// Surviving subset of `candidates`, sorted.
std::vector<NodeId> DenoiseOod(const LabelMatrix& propagated, const std::vector<NodeId>& candidates);

void WriteDenoiseVerdicts(const std::filesystem::path& path, const std::vector<DenoiseVerdict>& v);
std::vector<DenoiseVerdict> ReadDenoiseVerdicts(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// OOD augmentation by boundary/center mixup

struct MixupConfig {
  double alpha = 0.5;
  int boundary_count = 20;
  int synth_count = 100;
  std::uint64_t seed = 0;
  void Validate() const;
};

struct SyntheticProvenance {
  NodeId boundary_id = 0;
  double alpha = 0.0;
};

struct SyntheticOODSet {
  Matrix embeddings;  // synth_count x hidden_dim
  int label = 0;      // OOD class index (C in zero-based numbering)
  Vector center;
  std::vector<SyntheticProvenance> provenance;

  std::int64_t size() const { return embeddings.rows(); }
};

/// The K lowest-confidence nodes, ties by ascending id.
std::vector<NodeId> SelectBoundaryNodes(const std::map<NodeId, double>& train_confidences,
                                        int count);

/// Mean hidden row over `ood_ids`.
Vector OodCenter(const Matrix& hidden, const std::vector<NodeId>& ood_ids);

/// alpha * boundary + (1 - alpha) * center, elementwise.
Vector MixupPoint(double alpha, const Eigen::Ref<const Vector>& boundary,
                  const Eigen::Ref<const Vector>& center);

/// synth_count rows cycling through the boundary ids after one seeded shuffle.
SyntheticOODSet MixupAugment(const Matrix& hidden, const std::vector<NodeId>& boundary_ids,
                             const Vector& center, int ood_label, const MixupConfig& cfg);

/// Embeddings go to `bin_path` in the binary matrix format; center, label and
/// per-row provenance go to the JSONL sidecar.
void WriteSyntheticSet(const std::filesystem::path& bin_path,
                       const std::filesystem::path& sidecar_path, const SyntheticOODSet& s);
SyntheticOODSet ReadSyntheticSet(const std::filesystem::path& bin_path,
                                 const std::filesystem::path& sidecar_path);

}  // namespace cfc
