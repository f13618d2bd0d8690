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

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cfc/labelspace.hpp"
#include "cfc/random.hpp"
#include "test_util.hpp"

using namespace cfc;

namespace {

std::int64_t BruteForceAssignment(const std::vector<std::vector<std::int64_t>>& t) {
  const std::size_t rows = t.size(), cols = t[0].size();
  const std::size_t n = std::max(rows, cols);
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::int64_t best = 0;
  do {
    std::int64_t s = 0;
    for (std::size_t i = 0; i < rows; ++i) {
      if (perm[i] < cols) s += t[i][perm[i]];
    }
    best = std::max(best, s);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

Graph TextGraph(const std::vector<std::string>& texts) {
  Graph g;
  g.num_nodes = static_cast<std::int64_t>(texts.size());
  g.node_text = texts;
  g.labels.assign(texts.size(), std::nullopt);
  return g;
}

}  // namespace

TEST_CASE("tokenizer") {
  CHECK(Tokenize("Deep-Learning, 3D  vision!") == std::vector<std::string>{"deep", "learning", "3d", "vision"});
  CHECK(Tokenize("  ").empty());
}

TEST_CASE("TF-IDF hand example") {
  const Matrix t = TfidfVectors({"machine learning", "deep learning", "robotics"});
  // "learning" appears in two of three documents, the others in one.
  const double shared = std::log(4.0 / 3.0) + 1.0;
  const double unique = std::log(2.0) + 1.0;
  const double expect = shared * shared / (shared * shared + unique * unique);
  CHECK(Cosine(t.row(0).transpose(), t.row(1).transpose()) == doctest::Approx(expect));
  CHECK(Cosine(t.row(0).transpose(), t.row(2).transpose()) == 0.0);
  for (Eigen::Index i = 0; i < 3; ++i) CHECK(t.row(i).norm() == doctest::Approx(1.0));
  CHECK_THROWS_AS(TfidfVectors({}), ValidationError);
}

TEST_CASE("cosine") {
  CHECK(Cosine(Vector::Zero(3), Vector::Ones(3)) == 0.0);
  Vector u(2), v(2);
  u << 1, 0;
  v << 1, 1;
  CHECK(Cosine(u, v) == doctest::Approx(std::sqrt(0.5)));
  CHECK_THROWS_AS(Cosine(u, Vector::Ones(3)), DimensionError);
}

TEST_CASE("default minimum count") {
  CHECK(DefaultMinCount(0) == 2);
  CHECK(DefaultMinCount(100) == 2);
  CHECK(DefaultMinCount(201) == 3);
  CHECK(DefaultMinCount(1000) == 10);
}

TEST_CASE("merging by threshold") {
  const std::map<std::string, std::int64_t> counts = {
      {"Machine Learning", 5}, {"deep learning", 3}, {"robotics", 1}};
  // cosine(machine learning, deep learning) is about 0.37.
  auto post = MergeCategories(counts, 0.3, 2);
  CHECK(post.merged_labels == std::vector<std::string>{"machine learning"});
  CHECK(post.label_counts.at("machine learning") == 8);
  CHECK(post.raw_to_merged.at("deep learning") == "machine learning");
  CHECK_FALSE(post.raw_to_merged.at("robotics").has_value());

  post = MergeCategories(counts, 0.5, 2);
  CHECK(post.merged_labels == std::vector<std::string>{"machine learning", "deep learning"});
  CHECK(post.sim_threshold == 0.5);

  post = MergeCategories(counts, 0.5, 1);
  CHECK(post.merged_labels.size() == 3);
  CHECK_THROWS_WITH_AS(MergeCategories(counts, 0.5, 100), doctest::Contains("empty post-OOD label space"),
                       ValidationError);
  CHECK_THROWS_AS(MergeCategories({}, 0.5, 1), ValidationError);
  CHECK_THROWS_AS(MergeCategories({{"x", -1}}, 0.5, 1), ValidationError);
}

TEST_CASE("spelling variants fold together and ties name the group lexicographically") {
  const auto post = MergeCategories({{"Robotics", 2}, {" robotics", 1}, {"b topic", 2}, {"a topic", 2}}, 0.3, 1);
  CHECK(post.label_counts.at("robotics") == 3);
  // "a topic" and "b topic" share "topic": cosine about 0.37.
  CHECK(post.label_counts.at("a topic") == 4);
  CHECK(post.merged_labels == std::vector<std::string>{"a topic", "robotics"});
}

TEST_CASE("merge properties on random category sets") {
  const std::vector<std::string> words = {"graph", "learning", "neural", "vision", "robot",
                                          "secure", "crypto", "network", "data", "query"};
  Rng rng(21);
  for (int trial = 0; trial < 30; ++trial) {
    std::map<std::string, std::int64_t> counts;
    for (int i = 0; i < 8; ++i) {
      std::string name = words[rng.Below(words.size())];
      if (rng.Uniform01() < 0.7) name += " " + words[rng.Below(words.size())];
      counts[name] += 1 + static_cast<std::int64_t>(rng.Below(5));
    }
    // Lower thresholds merge more: the group count never grows.
    std::size_t previous = counts.size() + 1;
    for (double th = 1.0; th >= 0.0; th -= 0.1) {
      const auto groups = CountMergedGroups(counts, th);
      CHECK(groups <= previous);
      previous = groups;
    }
    // Counts are conserved across kept and discarded groups.
    const auto post = MergeCategories(counts, 0.5, 1);
    std::int64_t in = 0, out = 0;
    for (const auto& [_, c] : counts) in += c;
    for (const auto& [_, c] : post.label_counts) out += c;
    CHECK(in == out);
    CHECK(post.merged_labels.size() == CountMergedGroups(counts, 0.5));
    CHECK(std::is_sorted(post.merged_labels.begin(), post.merged_labels.end(),
                         [&](const auto& a, const auto& b) {
                           return post.label_counts.at(a) > post.label_counts.at(b);
                         }));
    // Raising min_count only removes labels.
    std::int64_t largest = 0;
    for (const auto& [_, c] : post.label_counts) largest = std::max(largest, c);
    const auto strict = MergeCategories(counts, 0.5, std::min<std::int64_t>(largest, 4));
    CHECK(strict.merged_labels.size() <= post.merged_labels.size());
    for (const auto& l : strict.merged_labels) {
      CHECK(std::find(post.merged_labels.begin(), post.merged_labels.end(), l) != post.merged_labels.end());
      CHECK(strict.label_counts.at(l) == post.label_counts.at(l));
    }
  }
}

TEST_CASE("classification prompt and parsing") {
  const auto post = MergeCategories({{"cryptography", 4}, {"robotics", 3}}, 0.5, 2);
  const auto p = BuildOodClassificationPrompt("A text", post);
  CHECK(p.find("cryptography, robotics") != std::string::npos);
  CHECK(p.find("A text") != std::string::npos);
  CHECK_THROWS_AS(BuildOodClassificationPrompt("", post), ValidationError);

  const auto [answer, conf] = ParseClassificationResponse(R"(x [{"answer": "Robotics", "confidence": 2}])");
  CHECK(answer == "Robotics");
  CHECK(conf == 1.0);
  CHECK_THROWS_AS(ParseClassificationResponse("nothing"), ParseError);
  CHECK_THROWS_AS(ParseClassificationResponse(R"([{"confidence": 1}])"), ParseError);
}

TEST_CASE("snapping free text into the label space") {
  const auto post = MergeCategories({{"cryptography", 4}, {"robotics systems", 3}}, 0.5, 2);
  CHECK(SnapToLabelSpace(" Cryptography ", post) == "cryptography");
  CHECK(SnapToLabelSpace("applied cryptography", post) == "cryptography");
  CHECK(SnapToLabelSpace("Robotics", post) == "robotics systems");
  CHECK(SnapToLabelSpace("zzz", post) == "cryptography");
}

TEST_CASE("ClassifyOod with a mock gateway") {
  const Graph g = TextGraph({"doc zero", "doc one", "doc two", ""});
  const auto post = MergeCategories({{"cryptography", 4}, {"robotics", 3}}, 0.5, 2);
  MockFixture f;
  f.AddRule("doc zero", R"([{"answer": "Robotics", "confidence": 0.7}])");
  f.AddRule("doc one", "garbage");
  f.AddRule("doc two", R"([{"answer": "crypto stuff", "confidence": 0.6}])");
  LlmGateway gw(GatewayConfig{}, f);
  const auto a = ClassifyOod({2, 0, 1, 3, 0}, g, post, gw, 1);
  REQUIRE(a.size() == 4);
  CHECK(a[0].predicted_label == "robotics");
  CHECK(a[0].confidence == 0.7);
  CHECK(a[1].predicted_label == "cryptography");
  CHECK(a[1].confidence == 0.0);
  CHECK(a[2].predicted_label == "cryptography");
  CHECK(a[3].raw_response.empty());

  LlmGateway empty(GatewayConfig{}, MockFixture{});
  try {
    ClassifyOod({0, 1}, g, post, empty);
    FAIL("expected ClassifyOodError");
  } catch (const ClassifyOodError& e) {
    CHECK(e.partial().size() <= 1);
  }
}

TEST_CASE("assignment solver matches brute force") {
  Rng rng(13);
  for (int trial = 0; trial < 200; ++trial) {
    const auto rows = 1 + rng.Below(5), cols = 1 + rng.Below(5);
    std::vector<std::vector<std::int64_t>> t(rows, std::vector<std::int64_t>(cols));
    for (auto& r : t) {
      for (auto& w : r) w = static_cast<std::int64_t>(rng.Below(10));
    }
    std::vector<int> match;
    const auto got = MaxWeightAssignment(t, &match);
    CHECK(got == BruteForceAssignment(t));
    std::int64_t sum = 0;
    std::vector<bool> used(cols, false);
    for (std::size_t i = 0; i < rows; ++i) {
      if (match[i] < 0) continue;
      CHECK_FALSE(used[match[i]]);
      used[match[i]] = true;
      sum += t[i][match[i]];
    }
    CHECK(sum == got);
  }
  CHECK(MaxWeightAssignment({}) == 0);
  CHECK_THROWS_AS(MaxWeightAssignment({{1, 2}, {3}}), DimensionError);
}

TEST_CASE("cluster accuracy") {
  const std::map<NodeId, std::string> truth = {{0, "x"}, {1, "x"}, {2, "y"}, {3, "y"}, {4, "y"}};
  auto mk = [](const std::vector<std::string>& pred) {
    std::vector<OodAssignment> a;
    for (std::size_t i = 0; i < pred.size(); ++i) a.push_back({static_cast<NodeId>(i), pred[i], 1.0, ""});
    return a;
  };
  CHECK(ClusterAccuracy(mk({"b", "b", "a", "a", "a"}), truth) == 1.0);
  CHECK(ClusterAccuracy(mk({"a", "a", "a", "a", "a"}), truth) == doctest::Approx(0.6));
  // Two predicted labels cannot both claim "y".
  CHECK(ClusterAccuracy(mk({"a", "b", "c", "c", "d"}), truth) == doctest::Approx(0.6));
  CHECK_THROWS_AS(ClusterAccuracy({}, truth), ValidationError);
  CHECK_THROWS_AS(ClusterAccuracy(mk({"a", "a", "a", "a", "a", "a"}), truth), ValidationError);
}

TEST_CASE("label space and assignments round-trip") {
  cfc::testing::TempDir dir;
  const auto post = MergeCategories({{"a topic", 2}, {"zzz", 1}, {"robotics", 5}}, 0.5, 2);
  WritePostLabelSpace(dir / "p.json", post);
  const auto back = ReadPostLabelSpace(dir / "p.json");
  CHECK(back.merged_labels == post.merged_labels);
  CHECK(back.label_counts == post.label_counts);
  CHECK(back.raw_to_merged == post.raw_to_merged);
  CHECK(back.min_count == 2);

  const std::vector<OodAssignment> a = {{1, "robotics", 0.5, "r\n1"}, {4, "a topic", 0.0, ""}};
  WriteAssignments(dir / "a.jsonl", a);
  const auto ab = ReadAssignments(dir / "a.jsonl");
  REQUIRE(ab.size() == 2);
  CHECK(ab[0].raw_response == "r\n1");
  CHECK(ab[1].predicted_label == "a topic");
}
