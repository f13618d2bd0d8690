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

#include "cfc/fixture.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>

#include <nlohmann/json.hpp>

#include "cfc/random.hpp"

namespace cfc {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct Topic {
  std::string name;
  std::vector<std::string> phrasings;  // how the mock LLM names it
  std::vector<std::string> words;
};

const std::vector<Topic>& Topics() {
  static const std::vector<Topic> topics = {
      {"computer vision", {}, {"image", "segmentation", "convolutional", "camera", "pixel"}},
      {"databases", {}, {"query", "index", "transaction", "relational", "storage"}},
      {"graph theory", {}, {"vertex", "coloring", "planar", "spanning", "matching"}},
      {"cryptography",
       {"cryptography", "Cryptography", "applied cryptography"},
       {"cipher", "encryption", "key", "signature", "lattice"}},
      {"robotics",
       {"robotics", "Robotics", "robotics systems"},
       {"manipulator", "locomotion", "actuator", "grasping", "odometry"}},
  };
  return topics;
}

std::string Marker(NodeId id) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "[doc-%04lld]", static_cast<long long>(id));
  return buf;
}

std::string Detection(bool is_id, const std::string& category) {
  return json::array({{{"answer", is_id ? "True" : "False"},
                       {"confidence", 0.9},
                       {"category", category}}})
      .dump();
}

std::string Classification(const std::string& category) {
  return json::array({{{"answer", category}, {"confidence", 0.8}}}).dump();
}

std::vector<NodeId> TakeRandom(std::vector<NodeId> pool, std::size_t k, Rng& rng) {
  rng.Shuffle(std::span<NodeId>(pool));
  pool.resize(std::min(k, pool.size()));
  std::sort(pool.begin(), pool.end());
  return pool;
}

}  // namespace

const std::vector<std::string>& FixtureIdClasses() {
  static const std::vector<std::string> v = {"computer vision", "databases", "graph theory"};
  return v;
}

const std::vector<std::string>& FixtureOodClasses() {
  static const std::vector<std::string> v = {"cryptography", "robotics"};
  return v;
}

Graph MakeFixtureGraph(const FixtureOptions& opt) {
  const auto& topics = Topics();
  const int k = static_cast<int>(topics.size());
  const int d = opt.feature_dim;
  if (d < 2 * k) throw ValidationError("fixture feature_dim must be at least twice the class count");
  if (opt.nodes_per_class < 2 || opt.ood_nodes_per_class < 1) {
    throw ValidationError("fixture class sizes too small");
  }
  Rng rng(opt.seed);

  // Shuffled so node ids carry no class information.
  std::vector<int> cls;
  for (int c = 0; c < k; ++c) cls.insert(cls.end(), c < 3 ? opt.nodes_per_class : opt.ood_nodes_per_class, c);
  rng.Shuffle(std::span<int>(cls));
  const int n = static_cast<int>(cls.size());

  // ID centers live in the first half of the coordinates; each OOD topic is
  // an ID center shifted along a coordinate from the second half.
  Matrix centers = Matrix::Zero(k, d);
  for (int c = 0; c < 3; ++c) {
    for (int j = 0; j < d / 2; ++j) centers(c, j) = rng.Normal();
    centers.row(c) *= opt.center_norm / centers.row(c).norm();
  }
  for (int c = 3; c < k; ++c) {
    centers.row(c) = centers.row(c - 3);
    centers(c, d / 2 + c) = opt.ood_offset;
  }

  Graph g;
  g.num_nodes = n;
  g.features.resize(n, d);
  for (int i = 0; i < n; ++i) {
    const int c = cls[i];
    const auto& t = topics[c];
    for (int j = 0; j < d; ++j) g.features(i, j) = centers(c, j) + opt.noise * rng.Normal();
    std::string text = "A study on " + t.name + " covering";
    for (int w = 0; w < 3; ++w) text += " " + t.words[rng.Below(t.words.size())];
    text += ". " + Marker(i);
    g.node_text.push_back(std::move(text));
    g.labels.emplace_back(t.name);
  }
  std::vector<double> p_in(k);
  for (int c = 0; c < k; ++c) {
    const int size = c < 3 ? opt.nodes_per_class : opt.ood_nodes_per_class;
    p_in[c] = size > 1 ? std::min(1.0, opt.intra_degree / (size - 1)) : 0.0;
  }
  std::vector<std::pair<NodeId, NodeId>> raw;
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      const double p = cls[i] == cls[j] ? p_in[cls[i]] : opt.p_out;
      if (rng.Uniform01() < p) raw.emplace_back(i, j);
    }
  }
  g.edges = CanonicalEdges(n, raw);
  std::set<std::string> names;
  for (const auto& t : topics) names.insert(t.name);
  g.class_names.assign(names.begin(), names.end());
  g.Validate();
  return g;
}

FixtureStats WriteFixture(const fs::path& dir, const FixtureOptions& opt) {
  fs::create_directories(dir);
  const Graph g = MakeFixtureGraph(opt);
  SaveNodes(g, dir / "nodes.jsonl");
  SaveEdges(g, dir / "edges.jsonl");
  WriteMatrixBinary(dir / "features.bin", g.features);

  const double train_frac = 0.5, val_frac = 0.4;
  const auto split = SplitDataset(g, FixtureIdClasses(), FixtureOodClasses(), opt.split_seed,
                                  train_frac, val_frac);
  std::vector<NodeId> queried = split.val_ids;
  queried.insert(queried.end(), split.test_ids.begin(), split.test_ids.end());
  std::sort(queried.begin(), queried.end());

  const std::set<std::string> ood(FixtureOodClasses().begin(), FixtureOodClasses().end());
  std::vector<NodeId> true_ood, true_id;
  for (const auto id : queried) (ood.count(*g.labels[id]) ? true_ood : true_id).push_back(id);

  // recall = tp / |true_ood|, precision = tp / (tp + fp)
  Rng rng(opt.seed ^ 0x5eedf1a9ULL);
  const auto tp = static_cast<std::size_t>(std::floor(opt.recall * true_ood.size() + 0.5));
  const auto fp = static_cast<std::size_t>(
      std::floor(tp * (1.0 - opt.precision) / opt.precision + 0.5));
  const auto flagged_true = TakeRandom(true_ood, tp, rng);
  const auto flagged_false = TakeRandom(true_id, fp, rng);
  const std::set<NodeId> flagged_t(flagged_true.begin(), flagged_true.end());
  const std::set<NodeId> flagged_f(flagged_false.begin(), flagged_false.end());

  std::map<std::string, const Topic*> by_name;
  for (const auto& t : Topics()) by_name[t.name] = &t;
  const auto& ood_topics = FixtureOodClasses();

  std::ofstream out(dir / "mock.jsonl");
  if (!out) throw Error("cannot write " + (dir / "mock.jsonl").string());
  auto rule = [&](const std::string& substr, const std::string& response) {
    out << json{{"match", "substr:" + substr}, {"response", response}}.dump() << '\n';
  };
  // OOD classification prompts first: they also contain the node marker.
  for (const auto id : queried) {
    const auto& label = *g.labels[id];
    const std::string answer =
        ood.count(label) ? by_name[label]->phrasings[rng.Below(3)] : ood_topics[id % 2];
    rule(Marker(id) + " Task: There are the following categories", Classification(answer));
  }
  for (const auto id : queried) {
    const auto& label = *g.labels[id];
    if (flagged_t.count(id)) {
      rule(Marker(id), Detection(false, by_name[label]->phrasings[rng.Below(3)]));
    } else if (flagged_f.count(id)) {
      const auto& wrong = by_name[ood_topics[rng.Below(2)]]->phrasings;
      rule(Marker(id), Detection(false, wrong[rng.Below(3)]));
    } else {
      rule(Marker(id), Detection(true, label));
    }
  }

  const json config = {
      {"dataset", {{"nodes", "nodes.jsonl"}, {"edges", "edges.jsonl"}, {"features", "features.bin"}}},
      {"split",
       {{"id_classes", FixtureIdClasses()},
        {"ood_classes", FixtureOodClasses()},
        {"seed", opt.split_seed},
        {"train_frac", train_frac},
        {"val_frac", val_frac}}},
      {"coarse", {{"mode", "easy_reject"}}},
      {"gateway", {{"mode", "mock"}, {"mock_fixture", "mock.jsonl"}}},
      {"artifacts_dir", "artifacts"},
  };
  std::ofstream cfg(dir / "config.json");
  cfg << config.dump(2) << '\n';

  FixtureStats s;
  s.queried_ood = static_cast<std::int64_t>(true_ood.size());
  s.flagged_true = static_cast<std::int64_t>(flagged_true.size());
  s.flagged_false = static_cast<std::int64_t>(flagged_false.size());
  return s;
}

}  // namespace cfc
