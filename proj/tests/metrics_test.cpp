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

#include <doctest.h>

#include "cfc/metrics.hpp"
#include "cfc/random.hpp"
#include "test_util.hpp"

using namespace cfc;

namespace {

// Pairwise definition, quadratic but obviously right.
double PairwiseAuroc(const std::vector<double>& s, const std::vector<bool>& pos) {
  double wins = 0.0;
  std::int64_t pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!pos[i]) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (pos[j]) continue;
      ++pairs;
      wins += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
    }
  }
  return wins / static_cast<double>(pairs);
}

}  // namespace

TEST_CASE("accuracy report hand example") {
  // Classes 0 and 1 are ID, 2 is OOD.
  const std::map<NodeId, int> truth = {{0, 0}, {1, 0}, {2, 1}, {3, 2}, {4, 2}};
  const std::map<NodeId, int> pred = {{0, 0}, {1, 1}, {2, 1}, {3, 2}, {4, 0}};
  const auto r = AccuracyReport(pred, truth, 2);
  CHECK(r.n_id == 3);
  CHECK(r.n_ood == 2);
  CHECK(r.id_accuracy == doctest::Approx(2.0 / 3.0));
  CHECK(r.ood_accuracy == 0.5);
  CHECK(r.overall_accuracy == 0.6);
  CHECK(r.per_class_accuracy.at(0) == 0.5);
  CHECK(r.per_class_accuracy.at(1) == 1.0);
  CHECK_THROWS_AS(AccuracyReport({}, {}, 2), ValidationError);
  CHECK_THROWS_AS(AccuracyReport({{0, 0}}, truth, 2), ValidationError);
}

TEST_CASE("overall accuracy is the count-weighted mean of ID and OOD accuracy") {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    std::map<NodeId, int> truth, pred;
    const int n = 5 + static_cast<int>(rng.Below(40));
    for (int i = 0; i < n; ++i) {
      truth[i] = static_cast<int>(rng.Below(4));
      pred[i] = static_cast<int>(rng.Below(4));
    }
    const auto r = AccuracyReport(pred, truth, 3);
    const double weighted =
        (r.n_id * r.id_accuracy + r.n_ood * r.ood_accuracy) / static_cast<double>(r.n_id + r.n_ood);
    CHECK(r.overall_accuracy == doctest::Approx(weighted).epsilon(1e-12));
    CHECK(r.overall_accuracy >= std::min(r.id_accuracy, r.ood_accuracy) - 1e-12);
    CHECK(r.overall_accuracy <= std::max(r.id_accuracy, r.ood_accuracy) + 1e-12);
  }
}

TEST_CASE("AUROC examples") {
  CHECK(Auroc(std::vector<double>{0.9, 0.8, 0.1, 0.2}, {true, true, false, false}) == 1.0);
  CHECK(Auroc(std::vector<double>{0.1, 0.2, 0.9, 0.8}, {true, true, false, false}) == 0.0);
  CHECK(Auroc(std::vector<double>{0.5, 0.5, 0.5}, {true, false, false}) == 0.5);
  // One inversion out of four pairs.
  CHECK(Auroc(std::vector<double>{0.9, 0.3, 0.4, 0.1}, {true, true, false, false}) == 0.75);
  CHECK_THROWS_AS(Auroc(std::vector<double>{0.1, 0.2}, {true, true}), ValidationError);
  CHECK_THROWS_AS(Auroc(std::vector<double>{0.1}, {true, false}), DimensionError);

  const std::map<NodeId, double> scores = {{3, 0.9}, {7, 0.1}};
  CHECK(Auroc(scores, {{3, true}, {7, false}}) == 1.0);
  CHECK_THROWS_AS(Auroc(scores, {{3, true}, {8, false}}), ValidationError);
}

TEST_CASE("AUROC matches the pairwise definition and its symmetries") {
  Rng rng(17);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 2 + static_cast<int>(rng.Below(30));
    std::vector<double> s(n);
    std::vector<bool> pos(n);
    for (int i = 0; i < n; ++i) {
      s[i] = static_cast<double>(rng.Below(6)) / 5.0;  // coarse grid forces ties
      pos[i] = rng.Uniform01() < 0.5;
    }
    pos[0] = true;
    pos[1] = false;
    const double a = Auroc(s, pos);
    CHECK(a == doctest::Approx(PairwiseAuroc(s, pos)));
    // Flipping labels mirrors the curve; monotone transforms change nothing.
    std::vector<bool> flipped(n);
    std::vector<double> squashed(n);
    for (int i = 0; i < n; ++i) {
      flipped[i] = !pos[i];
      squashed[i] = 3.0 * s[i] * s[i] + 1.0;
    }
    CHECK(Auroc(s, flipped) == doctest::Approx(1.0 - a));
    CHECK(Auroc(squashed, pos) == doctest::Approx(a));
  }
}

TEST_CASE("threshold baseline") {
  Matrix p(3, 2);
  p << 0.9, 0.1, 0.55, 0.45, 0.3, 0.7;
  auto pred = ThresholdBaseline(p, {0, 1, 2}, ThresholdMode::kSoftmax, 0.6);
  CHECK(pred.at(0) == 0);
  CHECK(pred.at(1) == 2);
  CHECK(pred.at(2) == 1);
  // The comparison is inclusive.
  pred = ThresholdBaseline(p, {1}, ThresholdMode::kSigmoid, 0.55);
  CHECK(pred.at(1) == 0);
  CHECK(ThresholdBaseline(p, {0, 1, 2}, ThresholdMode::kSoftmax, 0.0).at(1) == 0);
  CHECK_THROWS_AS(ThresholdBaseline(p, {0}, ThresholdMode::kSoftmax, 1.5), ValidationError);

  const auto score = MaxProbOodScore(p, {0, 2});
  CHECK(score.at(0) == doctest::Approx(0.1));
  CHECK(score.at(2) == doctest::Approx(0.3));
  CHECK(score.count(1) == 0);
}

TEST_CASE("threshold sweep") {
  Matrix p(4, 2);
  p << 0.95, 0.05, 0.85, 0.15, 0.52, 0.48, 0.6, 0.4;
  // Nodes 2 and 3 are OOD (index 2): any tau in (0.6, 0.85] separates them.
  const std::map<NodeId, int> truth = {{0, 0}, {1, 0}, {2, 2}, {3, 2}};
  const auto s = SweepThreshold(p, {0, 1, 2, 3}, truth, ThresholdMode::kSoftmax);
  REQUIRE(s.taus.size() == 9);
  REQUIRE(s.val_reports.size() == 9);
  CHECK(s.taus.front() == doctest::Approx(0.1));
  CHECK(s.taus.back() == doctest::Approx(0.9));
  CHECK(s.best_tau == doctest::Approx(0.7));
  CHECK(s.val_reports[6].overall_accuracy == 1.0);
  // Raising tau never turns an OOD prediction back into an ID one.
  for (std::size_t k = 1; k < 9; ++k) {
    CHECK(s.val_reports[k].ood_accuracy >= s.val_reports[k - 1].ood_accuracy);
    CHECK(s.val_reports[k].id_accuracy <= s.val_reports[k - 1].id_accuracy);
  }
}

TEST_CASE("report JSON round-trip and table") {
  EvalReport r;
  r.id_accuracy = 0.8749;
  r.ood_accuracy = 0.9574;
  r.overall_accuracy = 0.9;
  r.auroc = 0.95;
  r.per_class_accuracy = {{0, 0.5}, {3, 1.0}};
  r.n_id = 10;
  r.n_ood = 4;
  const auto back = EvalReportFromJson(ToJson(r));
  CHECK(back.id_accuracy == r.id_accuracy);
  CHECK(back.auroc == r.auroc);
  CHECK(back.per_class_accuracy == r.per_class_accuracy);
  CHECK(back.n_ood == 4);
  EvalReport no_auroc = r;
  no_auroc.auroc.reset();
  CHECK_FALSE(EvalReportFromJson(ToJson(no_auroc)).auroc.has_value());

  const auto table = RenderReportTable({{"CFC", r}, {"GCN_softmax", no_auroc}});
  CHECK(table.find("87.49") != std::string::npos);
  CHECK(table.find("95.74") != std::string::npos);
  CHECK(table.find("90.00") != std::string::npos);
  CHECK(table.find("GCN_softmax") != std::string::npos);
  CHECK(std::count(table.begin(), table.end(), '\n') == 4);
}
