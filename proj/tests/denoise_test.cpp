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

#include <map>

#include "cfc/denoise_augment.hpp"
#include "cfc/random.hpp"
#include "test_util.hpp"

using namespace cfc;
using cfc::testing::DenseAdjacency;
using cfc::testing::GraphFromEdges;
using cfc::testing::RandomGraph;

namespace {

// Straightforward dense reference: P = D^-1 A with isolated rows left at zero.
Matrix DenseReference(const Graph& g, const LabelMatrix& init, int steps) {
  const Matrix a = DenseAdjacency(g);
  Matrix p = Matrix::Zero(a.rows(), a.cols());
  std::vector<bool> fixed(a.rows(), false);
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    const double d = a.row(i).sum();
    if (d > 0) p.row(i) = a.row(i) / d;
    else fixed[i] = true;
  }
  for (const auto id : init.clamp_ids) fixed[id] = true;
  Matrix y = init.values;
  for (int k = 0; k < steps; ++k) {
    Matrix next = p * y;
    for (Eigen::Index i = 0; i < y.rows(); ++i) {
      if (fixed[i]) next.row(i) = init.values.row(i);
    }
    y = next;
  }
  return y;
}

}  // namespace

TEST_CASE("initial labels") {
  const auto y = MakeInitialLabels(5, 2, {0, 3}, {1, 0}, {4});
  CHECK(y.values.rows() == 5);
  CHECK(y.values.cols() == 3);
  CHECK(y.values(0, 1) == 1.0);
  CHECK(y.values(3, 0) == 1.0);
  CHECK(y.values(4, 2) == 1.0);
  CHECK(y.values.row(1).sum() == 0.0);
  CHECK(y.clamp_ids == std::vector<NodeId>{0, 3});
  CHECK_THROWS_AS(MakeInitialLabels(5, 2, {0}, {2}, {}), ValidationError);
  CHECK_THROWS_AS(MakeInitialLabels(5, 2, {0}, {0, 1}, {}), DimensionError);
  CHECK_THROWS_AS(MakeInitialLabels(5, 2, {0}, {0}, {0}), ValidationError);
}

TEST_CASE("star graph by hand") {
  // Hub 0 with leaves 1..4; leaves 1 and 2 are train nodes of classes 0 and 1.
  const Graph g = GraphFromEdges(5, {{0, 1}, {0, 2}, {0, 3}, {0, 4}});
  const auto init = MakeInitialLabels(5, 2, {1, 2}, {0, 1}, {3, 4});
  const auto y = LabelPropagate(RwNormalizeAdjacency(g), init, PropagationConfig{2});
  // Step 1: hub = (1/4, 1/4, 1/2), leaves 3 and 4 read the empty hub.
  // Step 2: hub = (1/4, 1/4, 0), leaves 3 and 4 = (1/4, 1/4, 1/2).
  CHECK(y.values(0, 0) == doctest::Approx(0.25));
  CHECK(y.values(0, 2) == doctest::Approx(0.0));
  CHECK(y.values(3, 2) == doctest::Approx(0.5));
  CHECK(y.values(4, 0) == doctest::Approx(0.25));
  CHECK(y.values.row(1) == init.values.row(1));
  CHECK(DenoiseOod(y, {4, 3}) == std::vector<NodeId>{3, 4});

  // After one step the leaves are all-zero rows; ties keep the candidate.
  const auto y1 = LabelPropagate(RwNormalizeAdjacency(g), init, PropagationConfig{1});
  CHECK(DenoiseOod(y1, {3, 4}) == std::vector<NodeId>{3, 4});
}

TEST_CASE("path graph, one step") {
  // 0-1-2 with node 0 clamped to class 0; node 1 averages its two neighbours.
  const Graph g = GraphFromEdges(3, {{0, 1}, {1, 2}});
  auto init = MakeInitialLabels(3, 2, {0}, {0}, {2});
  const auto y = LabelPropagate(RwNormalizeAdjacency(g), init, PropagationConfig{1});
  CHECK(y.values(1, 0) == 0.5);
  CHECK(y.values(1, 2) == 0.5);
  CHECK(y.values.row(0) == init.values.row(0));
}

TEST_CASE("a candidate surrounded by one clamped class is discarded") {
  // Hub 0 is a candidate; leaves 1..3 are clamped to class 2 of three ID classes.
  const Graph g = GraphFromEdges(4, {{0, 1}, {0, 2}, {0, 3}});
  const auto init = MakeInitialLabels(4, 3, {1, 2, 3}, {2, 2, 2}, {0});
  for (const int steps : {1, 2, 10}) {
    const auto y = LabelPropagate(RwNormalizeAdjacency(g), init, PropagationConfig{steps});
    const auto v = DenoiseVerdicts(y, {0});
    CHECK_FALSE(v[0].kept);
    CHECK(v[0].argmax == 2);
  }
}

TEST_CASE("sparse propagation matches the dense reference") {
  Rng rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    const int n = 30;
    Graph g = RandomGraph(n, 0.1, rng);
    std::vector<NodeId> train, cand;
    std::vector<int> cls;
    for (NodeId i = 0; i < n; ++i) {
      const double u = rng.Uniform01();
      if (u < 0.3) {
        train.push_back(i);
        cls.push_back(static_cast<int>(rng.Below(3)));
      } else if (u < 0.5) {
        cand.push_back(i);
      }
    }
    const auto init = MakeInitialLabels(n, 3, train, cls, cand);
    const int steps = 1 + trial;
    const auto y = LabelPropagate(RwNormalizeAdjacency(g), init, PropagationConfig{steps});
    const Matrix ref = DenseReference(g, init, steps);
    CHECK((y.values - ref).cwiseAbs().maxCoeff() < 1e-12);
    // Clamped rows keep their one-hot value and every entry stays in [0, 1].
    for (std::size_t k = 0; k < train.size(); ++k) CHECK(y.values(train[k], cls[k]) == 1.0);
    CHECK(y.values.minCoeff() >= 0.0);
    CHECK(y.values.maxCoeff() <= 1.0 + 1e-12);
    CHECK((y.values.rowwise().sum().array() <= 1.0 + 1e-12).all());
  }
}

TEST_CASE("zero steps returns the initial labels") {
  const Graph g = GraphFromEdges(3, {{0, 1}, {1, 2}});
  const auto init = MakeInitialLabels(3, 1, {0}, {0}, {2});
  CHECK(LabelPropagate(RwNormalizeAdjacency(g), init, PropagationConfig{0}).values == init.values);
  CHECK_THROWS_AS(LabelPropagate(RwNormalizeAdjacency(g), init, PropagationConfig{-1}), ValidationError);
  const Graph other = GraphFromEdges(4, {{0, 1}});
  CHECK_THROWS_AS(LabelPropagate(RwNormalizeAdjacency(other), init, PropagationConfig{}), DimensionError);
}

TEST_CASE("a candidate inside an ID cluster is dropped") {
  // Triangle 0-1-2 of class 0 train nodes plus candidate 3 attached to all of them;
  // candidate 4 hangs off candidate 5.
  const Graph g = GraphFromEdges(6, {{0, 1}, {1, 2}, {0, 2}, {3, 0}, {3, 1}, {3, 2}, {4, 5}});
  const auto init = MakeInitialLabels(6, 1, {0, 1, 2}, {0, 0, 0}, {3, 4, 5});
  const auto y = LabelPropagate(RwNormalizeAdjacency(g), init, PropagationConfig{});
  const auto v = DenoiseVerdicts(y, {3, 4, 5});
  REQUIRE(v.size() == 3);
  CHECK_FALSE(v[0].kept);
  CHECK(v[0].argmax == 0);
  CHECK(v[1].kept);
  CHECK(v[1].argmax == 1);
}

TEST_CASE("verdicts round-trip") {
  cfc::testing::TempDir dir;
  const std::vector<DenoiseVerdict> v = {{3, true, 2}, {8, false, 0}};
  WriteDenoiseVerdicts(dir / "v.jsonl", v);
  const auto back = ReadDenoiseVerdicts(dir / "v.jsonl");
  REQUIRE(back.size() == 2);
  CHECK(back[0].node_id == 3);
  CHECK(back[0].kept);
  CHECK(back[1].argmax == 0);
  CHECK_FALSE(back[1].kept);
}

TEST_CASE("boundary selection takes the least confident, ties by id") {
  const std::map<NodeId, double> conf = {{5, 0.9}, {7, 0.3}, {2, 0.3}, {1, 0.8}, {9, 0.31}};
  CHECK(SelectBoundaryNodes(conf, 2) == std::vector<NodeId>{2, 7});
  CHECK(SelectBoundaryNodes(conf, 3) == std::vector<NodeId>{2, 7, 9});
  CHECK(SelectBoundaryNodes(conf, 99).size() == 5);
  CHECK_THROWS_AS(SelectBoundaryNodes({}, 2), ValidationError);
  CHECK_THROWS_AS(SelectBoundaryNodes(conf, 0), ValidationError);
}

TEST_CASE("center and mixup arithmetic") {
  Matrix h(3, 2);
  h << 1, 2, 3, 4, 10, 20;
  const Vector c = OodCenter(h, {0, 1});
  CHECK(c(0) == 2.0);
  CHECK(c(1) == 3.0);
  CHECK_THROWS_AS(OodCenter(h, {}), ValidationError);
  CHECK_THROWS_AS(OodCenter(h, {3}), DimensionError);

  Vector b(2), z = Vector::Zero(2);
  b << 2, 4;
  CHECK(MixupPoint(0.5, b, z) == b / 2.0);
  CHECK(MixupPoint(1.0, b, c) == b);
  CHECK(MixupPoint(0.0, b, c) == c);
  CHECK_THROWS_AS(MixupPoint(0.5, b, Vector::Zero(3)), DimensionError);
}

TEST_CASE("mixup rows lie on boundary-center segments and cycle evenly") {
  Rng rng(4);
  const Matrix h = cfc::testing::RandomMatrix(12, 5, rng);
  const std::vector<NodeId> boundary = {1, 4, 6};
  const Vector center = OodCenter(h, {0, 2, 3});
  MixupConfig cfg;
  cfg.alpha = 0.3;
  cfg.synth_count = 10;
  cfg.seed = 42;
  const auto s = MixupAugment(h, boundary, center, 3, cfg);
  CHECK(s.size() == 10);
  CHECK(s.label == 3);
  std::map<NodeId, int> uses;
  for (int r = 0; r < 10; ++r) {
    const NodeId b = s.provenance[r].boundary_id;
    ++uses[b];
    const Vector expect = 0.3 * h.row(b).transpose() + 0.7 * center;
    CHECK((s.embeddings.row(r).transpose() - expect).cwiseAbs().maxCoeff() < 1e-15);
  }
  CHECK(uses.size() == 3);
  for (const auto& [id, count] : uses) CHECK((count == 3 || count == 4));

  const auto again = MixupAugment(h, boundary, center, 3, cfg);
  CHECK(again.embeddings == s.embeddings);

  cfg.alpha = 1.5;
  CHECK_THROWS_AS(MixupAugment(h, boundary, center, 3, cfg), ValidationError);
  cfg.alpha = 0.5;
  CHECK_THROWS_AS(MixupAugment(h, {}, center, 3, cfg), ValidationError);
}

TEST_CASE("synthetic sets round-trip") {
  cfc::testing::TempDir dir;
  Rng rng(5);
  const Matrix h = cfc::testing::RandomMatrix(6, 4, rng);
  MixupConfig cfg;
  cfg.synth_count = 7;
  const auto s = MixupAugment(h, {0, 5}, OodCenter(h, {1, 2}), 2, cfg);
  WriteSyntheticSet(dir / "s.bin", dir / "s.jsonl", s);
  const auto back = ReadSyntheticSet(dir / "s.bin", dir / "s.jsonl");
  CHECK(back.embeddings == s.embeddings);
  CHECK(back.center == s.center);
  CHECK(back.label == 2);
  REQUIRE(back.provenance.size() == 7);
  for (int r = 0; r < 7; ++r) CHECK(back.provenance[r].boundary_id == s.provenance[r].boundary_id);
}
