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
#include <vector>

#include "cfc/denoise_augment.hpp"
#include "cfc/graph.hpp"

namespace cfc {

/// softmax: one multi-class distribution per node (cross-entropy).
/// sigmoid: independent one-vs-rest probabilities (mean binary cross-entropy).
enum class OutputKind { kSoftmax, kSigmoid };

struct GcnParams {
  Matrix w0;  // d x h
  Matrix w1;  // h x out

  Eigen::Index in_dim() const { return w0.rows(); }
  Eigen::Index hidden_dim() const { return w0.cols(); }
  Eigen::Index out_dim() const { return w1.cols(); }
};

struct GcnGrads {
  Matrix w0;
  Matrix w1;
};

struct TrainConfig {
  double learning_rate = 0.01;
  double weight_decay = 5e-4;
  int epochs = 200;
  int hidden_dim = 64;
  std::uint64_t seed = 0;
  int early_stop_patience = 30;  // epochs without val improvement; 0 disables

  void Validate() const;
};

struct ForwardCache {
  Matrix ax;       // A_hat X
  Matrix h1_pre;   // A_hat X W0
  Matrix h1;       // ReLU(h1_pre)
  Matrix ah1;      // A_hat H1
  Matrix z_real;   // N x out probabilities
  Matrix z_synth;  // synth_count x out probabilities (empty without synth)
};

/// Glorot-uniform, bound sqrt(6 / (fan_in + fan_out)) per matrix.
GcnParams InitParams(Eigen::Index d, Eigen::Index h, Eigen::Index out, std::uint64_t seed);

/// Z = act(A_hat ReLU(A_hat X W0) W1). Synthetic rows are hidden-space points
/// and only pass through W1: Z_synth = act(S W1).
ForwardCache Forward(const GcnParams& p, const SparseMatrix& a_hat, const Matrix& x,
                     const SyntheticOODSet* synth = nullptr,
                     OutputKind kind = OutputKind::kSoftmax);

/// Row-wise softmax with max subtraction.
Matrix RowSoftmax(const Matrix& logits);

/// Mean loss over the masked real nodes plus every synthetic row. `labels`
/// has one entry per node (negative = unlabeled). Log arguments are floored
/// at 1e-12.
double Loss(const ForwardCache& cache, const std::vector<int>& labels,
            const std::vector<NodeId>& train_mask, int synth_label,
            OutputKind kind = OutputKind::kSoftmax);

/// Loss plus weight_decay / 2 * (|W0|^2 + |W1|^2).
double Objective(const GcnParams& p, const SparseMatrix& a_hat, const Matrix& x,
                 const SyntheticOODSet* synth, const std::vector<int>& labels,
                 const std::vector<NodeId>& train_mask, double weight_decay,
                 OutputKind kind = OutputKind::kSoftmax);

/// Exact gradient of Objective.
GcnGrads Backward(const GcnParams& p, const SparseMatrix& a_hat, const Matrix& x,
                  const SyntheticOODSet* synth, const std::vector<int>& labels,
                  const std::vector<NodeId>& train_mask, double weight_decay,
                  OutputKind kind = OutputKind::kSoftmax);

struct EpochRecord {
  int epoch = 0;
  double loss = 0.0;
  double val_overall = 0.0;
};

struct TrainResult {
  GcnParams params;
  std::vector<EpochRecord> history;
  int best_epoch = 0;
};

class TrainingDivergedError : public Error {
 public:
  TrainingDivergedError(const std::string& what, std::vector<EpochRecord> history)
      : Error(what), history_(std::move(history)) {}
  const std::vector<EpochRecord>& history() const { return history_; }

 private:
  std::vector<EpochRecord> history_;
};

/// What the classifier is trained and validated on.
struct TrainingData {
  std::vector<int> labels;          // per node, negative = not a training target
  std::vector<NodeId> train_mask;   // nodes contributing to the loss
  std::vector<NodeId> val_ids;      // early-stopping set
  std::vector<int> val_truth;       // per node; OOD nodes carry the OOD index
  const SyntheticOODSet* synth = nullptr;
  int out_dim = 0;
};

/// Full-batch Adam (beta1 0.9, beta2 0.999, eps 1e-8). Restores the params
/// with the best validation overall accuracy (earliest on ties).
TrainResult Train(const SparseMatrix& a_hat, const Matrix& x, const TrainingData& data,
                  const TrainConfig& cfg, OutputKind kind = OutputKind::kSoftmax);

/// Z_real for every node.
Matrix Predict(const GcnParams& p, const SparseMatrix& a_hat, const Matrix& x,
               OutputKind kind = OutputKind::kSoftmax);

/// Index of the row maximum; ties resolve to the lowest index.
int ArgmaxRow(const Eigen::Ref<const Eigen::RowVectorXd>& row);

/// Fraction of `ids` whose argmax equals truth[id].
double ArgmaxAccuracy(const Matrix& z, const std::vector<NodeId>& ids, const std::vector<int>& truth);

/// "CFCW", u32 d, u32 h, u32 out, then W0 and W1 as row-major float64.
void WriteCheckpoint(const std::filesystem::path& path, const GcnParams& p);
GcnParams ReadCheckpoint(const std::filesystem::path& path);

void WriteHistory(const std::filesystem::path& path, const std::vector<EpochRecord>& history);

}  // namespace cfc
