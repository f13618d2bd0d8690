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

#include "cfc/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "cfc/gcn.hpp"

namespace cfc {

nlohmann::json ToJson(const EvalReport& r) {
  nlohmann::json per_class = nlohmann::json::object();
  for (const auto& [c, acc] : r.per_class_accuracy) per_class[std::to_string(c)] = acc;
  return {{"id_accuracy", r.id_accuracy},
          {"ood_accuracy", r.ood_accuracy},
          {"overall_accuracy", r.overall_accuracy},
          {"auroc", r.auroc ? nlohmann::json(*r.auroc) : nlohmann::json(nullptr)},
          {"per_class_accuracy", per_class},
          {"n_id_test", r.n_id},
          {"n_ood_test", r.n_ood}};
}

EvalReport EvalReportFromJson(const nlohmann::json& j) {
  EvalReport r;
  r.id_accuracy = j.at("id_accuracy").get<double>();
  r.ood_accuracy = j.at("ood_accuracy").get<double>();
  r.overall_accuracy = j.at("overall_accuracy").get<double>();
  if (!j.at("auroc").is_null()) r.auroc = j["auroc"].get<double>();
  for (const auto& [k, v] : j.at("per_class_accuracy").items()) r.per_class_accuracy[std::stoi(k)] = v.get<double>();
  r.n_id = j.at("n_id_test").get<std::int64_t>();
  r.n_ood = j.at("n_ood_test").get<std::int64_t>();
  return r;
}

EvalReport AccuracyReport(const std::map<NodeId, int>& predictions,
                          const std::map<NodeId, int>& truth, int ood_class_index) {
  if (truth.empty()) throw ValidationError("accuracy report over an empty node set");
  if (predictions.size() != truth.size()) {
    throw ValidationError("predictions and truth cover different node sets");
  }
  std::int64_t id_correct = 0, ood_correct = 0;
  std::map<int, std::pair<std::int64_t, std::int64_t>> per_class;  // correct, total
  EvalReport r;
  for (const auto& [id, y] : truth) {
    const auto it = predictions.find(id);
    if (it == predictions.end()) throw ValidationError("node " + std::to_string(id) + " has no prediction");
    const bool correct = it->second == y;
    auto& pc = per_class[y];
    ++pc.second;
    pc.first += correct;
    if (y == ood_class_index) {
      ++r.n_ood;
      ood_correct += correct;
    } else {
      ++r.n_id;
      id_correct += correct;
    }
  }
  r.id_accuracy = r.n_id ? static_cast<double>(id_correct) / static_cast<double>(r.n_id) : 0.0;
  r.ood_accuracy = r.n_ood ? static_cast<double>(ood_correct) / static_cast<double>(r.n_ood) : 0.0;
  r.overall_accuracy =
      static_cast<double>(id_correct + ood_correct) / static_cast<double>(r.n_id + r.n_ood);
  for (const auto& [c, pc] : per_class) {
    r.per_class_accuracy[c] = static_cast<double>(pc.first) / static_cast<double>(pc.second);
  }
  return r;
}

double Auroc(const std::vector<double>& scores, const std::vector<bool>& is_ood) {
  if (scores.size() != is_ood.size()) throw DimensionError("scores and labels differ in length");
  const auto n = scores.size();
  const auto n_pos = static_cast<std::size_t>(std::count(is_ood.begin(), is_ood.end(), true));
  const auto n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) throw ValidationError("AUROC needs both OOD and ID samples");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Sum of mid-ranks (1-based) over positives.
  double pos_rank_sum = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double mid = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) {
      if (is_ood[order[k]]) pos_rank_sum += mid;
    }
    i = j + 1;
  }
  const double np = static_cast<double>(n_pos);
  const double u = pos_rank_sum - np * (np + 1.0) / 2.0;
  return u / (np * static_cast<double>(n_neg));
}

double Auroc(const std::map<NodeId, double>& scores, const std::map<NodeId, bool>& is_ood) {
  std::vector<double> s;
  std::vector<bool> y;
  for (const auto& [id, label] : is_ood) {
    const auto it = scores.find(id);
    if (it == scores.end()) throw ValidationError("node " + std::to_string(id) + " has no score");
    s.push_back(it->second);
    y.push_back(label);
  }
  return Auroc(s, y);
}

std::map<NodeId, int> ThresholdBaseline(const Matrix& probs, const std::vector<NodeId>& ids,
                                        ThresholdMode /*mode*/, double tau) {
  if (!(tau >= 0.0 && tau <= 1.0)) throw ValidationError("tau must be in [0, 1]");
  const int ood = static_cast<int>(probs.cols());
  std::map<NodeId, int> out;
  for (const auto id : ids) {
    const int c = ArgmaxRow(probs.row(id));
    out[id] = probs(id, c) >= tau ? c : ood;
  }
  return out;
}

std::map<NodeId, double> MaxProbOodScore(const Matrix& probs, const std::vector<NodeId>& ids) {
  std::map<NodeId, double> out;
  for (const auto id : ids) out[id] = 1.0 - probs.row(id).maxCoeff();
  return out;
}

ThresholdSweep SweepThreshold(const Matrix& probs, const std::vector<NodeId>& val_ids,
                              const std::map<NodeId, int>& val_truth, ThresholdMode mode) {
  ThresholdSweep s;
  double best = -1.0;
  for (int k = 1; k <= 9; ++k) {
    const double tau = k / 10.0;
    auto rep = AccuracyReport(ThresholdBaseline(probs, val_ids, mode, tau), val_truth,
                              static_cast<int>(probs.cols()));
    if (rep.overall_accuracy > best) {
      best = rep.overall_accuracy;
      s.best_tau = tau;
    }
    s.taus.push_back(tau);
    s.val_reports.push_back(std::move(rep));
  }
  return s;
}

std::string RenderReportTable(const std::vector<std::pair<std::string, EvalReport>>& rows) {
  std::size_t width = 6;
  for (const auto& [name, _] : rows) width = std::max(width, name.size());
  std::ostringstream out;
  auto cell = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%8.2f", 100.0 * v);
    return std::string(buf);
  };
  out << std::string(width - 6, ' ') << "Method" << "  " << std::string(6, ' ') << "ID"
      << std::string(5, ' ') << "OOD" << "  overall" << "    AUROC\n";
  out << std::string(width + 36, '-') << '\n';
  for (const auto& [name, r] : rows) {
    out << std::string(width - name.size(), ' ') << name << "  " << cell(r.id_accuracy)
        << cell(r.ood_accuracy) << ' ' << cell(r.overall_accuracy) << ' '
        << (r.auroc ? cell(*r.auroc) : std::string("       -")) << '\n';
  }
  return out.str();
}

}  // namespace cfc
