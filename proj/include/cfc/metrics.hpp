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
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cfc/graph.hpp"

namespace cfc {

struct EvalReport {
  double id_accuracy = 0.0;
  double ood_accuracy = 0.0;
  double overall_accuracy = 0.0;
  std::optional<double> auroc;
  std::map<int, double> per_class_accuracy;
  std::int64_t n_id = 0;
  std::int64_t n_ood = 0;
};

nlohmann::json ToJson(const EvalReport& r);
EvalReport EvalReportFromJson(const nlohmann::json& j);

/// ID accuracy over true-ID nodes, OOD accuracy over true-OOD nodes (correct
/// iff predicted == ood_class_index), overall micro-averaged over both.
EvalReport AccuracyReport(const std::map<NodeId, int>& predictions,
                          const std::map<NodeId, int>& truth, int ood_class_index);

/// P(score_ood > score_id) + 0.5 P(tie), computed from mid-ranks.
double Auroc(const std::map<NodeId, double>& scores, const std::map<NodeId, bool>& is_ood);
double Auroc(const std::vector<double>& scores, const std::vector<bool>& is_ood);

enum class ThresholdMode { kSoftmax, kSigmoid };

/// argmax class when the max probability >= tau, else the OOD index C
/// (= number of columns). Only rows in `ids` are predicted.
std::map<NodeId, int> ThresholdBaseline(const Matrix& probs, const std::vector<NodeId>& ids,
                                        ThresholdMode mode, double tau);

/// 1 - max class probability.
std::map<NodeId, double> MaxProbOodScore(const Matrix& probs, const std::vector<NodeId>& ids);

struct ThresholdSweep {
  std::vector<double> taus;
  std::vector<EvalReport> val_reports;
  double best_tau = 0.0;  // highest validation overall accuracy, smallest tau on ties
};

/// Evaluates tau in {0.1, ..., 0.9} on the validation ids.
ThresholdSweep SweepThreshold(const Matrix& probs, const std::vector<NodeId>& val_ids,
                              const std::map<NodeId, int>& val_truth, ThresholdMode mode);

/// One row per method with ID / OOD / overall percentages.
std::string RenderReportTable(const std::vector<std::pair<std::string, EvalReport>>& rows);

}  // namespace cfc
