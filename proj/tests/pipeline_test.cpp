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

#include <set>

#include <nlohmann/json.hpp>

#include "cfc/fixture.hpp"
#include "cfc/metrics.hpp"
#include "cfc/pipeline.hpp"
#include "test_util.hpp"

using namespace cfc;
using json = nlohmann::json;
using cfc::testing::ReadFile;
using cfc::testing::TempDir;
using cfc::testing::WriteFile;

namespace fs = std::filesystem;

namespace {

json MinimalConfig() {
  return {{"dataset", {{"nodes", "nodes.jsonl"}, {"edges", "edges.jsonl"}}},
          {"split", {{"id_classes", {"a", "b"}}, {"ood_classes", {"c"}}, {"seed", 3}}}};
}

void TouchDataset(const TempDir& dir) {
  WriteFile(dir / "nodes.jsonl", "");
  WriteFile(dir / "edges.jsonl", "");
}

// Small fixture that keeps the end-to-end tests quick.
RunConfig SmallFixture(const TempDir& dir) {
  FixtureOptions opt;
  opt.nodes_per_class = 40;
  opt.ood_nodes_per_class = 20;
  opt.feature_dim = 16;
  WriteFixture(dir.path(), opt);
  return LoadRunConfig(dir / "config.json");
}

}  // namespace

TEST_CASE("a minimal config gets every default") {
  TempDir dir;
  TouchDataset(dir);
  const auto cfg = ParseRunConfig(MinimalConfig(), dir.path());
  CHECK(cfg.coarse.tau == 0.7);
  CHECK(cfg.mixup.alpha == 0.5);
  CHECK(cfg.propagation.steps == 10);
  CHECK(cfg.mixup.synth_count == 100);
  CHECK(cfg.coarse.candidate_count == 10);
  CHECK(cfg.split.train_frac == 0.5);
  CHECK(cfg.split.seed == 3);
  // All randomness hangs off the split seed.
  CHECK(cfg.mixup.seed == 3);
  CHECK(cfg.train_fine.seed == 3);
  CHECK(cfg.coarse.seed == 3);
  CHECK(cfg.artifacts_dir == dir / "artifacts");
  CHECK(cfg.dataset.nodes == dir / "nodes.jsonl");

  const auto resolved = ToJson(cfg);
  CHECK(resolved["coarse"]["tau"] == 0.7);
  CHECK(resolved["mixup"]["synth_count"] == 100);
  // The resolved form parses back to itself.
  CHECK(ToJson(ParseRunConfig(resolved, dir.path())) == resolved);
}

TEST_CASE("config validation errors") {
  TempDir dir;
  TouchDataset(dir);
  auto j = MinimalConfig();
  j["foo"] = 1;
  CHECK_THROWS_WITH_AS(ParseRunConfig(j, dir.path()), doctest::Contains("\"foo\""), ValidationError);

  j = MinimalConfig();
  j["mixup"] = {{"alpah", 0.3}};
  CHECK_THROWS_WITH_AS(ParseRunConfig(j, dir.path()), doctest::Contains("mixup.alpah"), ValidationError);

  j = MinimalConfig();
  j["split"].erase("seed");
  CHECK_THROWS_WITH_AS(ParseRunConfig(j, dir.path()), doctest::Contains("split.seed"), ValidationError);

  j = MinimalConfig();
  j["coarse"] = {{"tau", "high"}};
  CHECK_THROWS_WITH_AS(ParseRunConfig(j, dir.path()), doctest::Contains("coarse.tau"), ValidationError);

  j = MinimalConfig();
  j["dataset"]["nodes"] = "absent.jsonl";
  CHECK_THROWS_AS(ParseRunConfig(j, dir.path()), ValidationError);

  j = MinimalConfig();
  j["split"]["ood_classes"] = {"a"};
  CHECK_THROWS_AS(ParseRunConfig(j, dir.path()), ValidationError);

  j = MinimalConfig();
  j["gateway"] = {{"mode", "offline"}};
  CHECK_THROWS_AS(ParseRunConfig(j, dir.path()), ValidationError);

  WriteFile(dir / "bad.json", "{not json");
  CHECK_THROWS_AS(LoadRunConfig(dir / "bad.json"), ValidationError);
}

TEST_CASE("stage names") {
  CHECK(StageOrder().size() == 9);
  for (const auto s : StageOrder()) CHECK(ParseStage(StageName(s)) == s);
  CHECK(StageName(Stage::kClassifyOod) == "classify-ood");
  CHECK_THROWS_AS(ParseStage("train"), ValidationError);
  CHECK(Upstream(Stage::kIngest).empty());
  const auto up = Upstream(Stage::kDenoise);
  CHECK(std::find(up.begin(), up.end(), Stage::kCoarse) != up.end());
}

TEST_CASE("stages refuse to run before their inputs exist") {
  TempDir dir;
  const auto cfg = SmallFixture(dir);
  Pipeline p(cfg);
  CHECK_THROWS_WITH_AS(p.RunStage(Stage::kDenoise), doctest::Contains("missing artifact: ingest"),
                       MissingArtifactError);
  p.RunStage(Stage::kIngest);
  CHECK_THROWS_WITH_AS(p.RunStage(Stage::kDenoise), doctest::Contains("missing artifact: coarse"),
                       MissingArtifactError);
  CHECK_THROWS_AS(EmitReport(cfg), MissingArtifactError);
}

TEST_CASE("run-all, caching and partial reruns") {
  TempDir dir;
  const auto cfg = SmallFixture(dir);
  std::string first_eval, eval_stamp;
  {
    Pipeline p(cfg);
    const auto out = p.RunAll();
    REQUIRE(out.size() == 9);
    for (const auto& o : out) CHECK(o.executed);
    CHECK(p.manifest().stages.size() == 9);
    first_eval = ReadFile(cfg.artifacts_dir / "eval.json");
    eval_stamp = p.manifest().stages.at("eval").completed_at;
  }

  // Every artifact belongs to exactly one manifest entry.
  const auto manifest = json::parse(ReadFile(cfg.artifacts_dir / "manifest.json"));
  std::multiset<std::string> claimed;
  for (const auto& [_, rec] : manifest["stages"].items()) {
    for (const auto& f : rec["outputs"]) claimed.insert(f.get<std::string>());
  }
  for (const auto& f : manifest["run_files"]) claimed.insert(f.get<std::string>());
  std::set<std::string> on_disk;
  for (const auto& e : fs::directory_iterator(cfg.artifacts_dir)) on_disk.insert(e.path().filename().string());
  CHECK(on_disk == std::set<std::string>(claimed.begin(), claimed.end()));
  for (const auto& f : on_disk) CHECK(claimed.count(f) == 1);

  {
    Pipeline p(cfg);
    for (const auto& o : p.RunAll()) CHECK_FALSE(o.executed);
    CHECK_FALSE(p.RunStage(Stage::kEval).executed);
    CHECK(p.manifest().stages.at("eval").completed_at == eval_stamp);
  }

  // A deleted intermediate is regenerated; identical content leaves the rest cached.
  fs::remove(cfg.artifacts_dir / "synth.bin");
  {
    Pipeline p(cfg);
    for (const auto& o : p.RunAll()) CHECK(o.executed == (o.stage == Stage::kAugment));
  }

  // A changed stage parameter reruns that stage and whatever its outputs feed.
  auto tweaked = cfg;
  tweaked.train_fine.epochs = cfg.train_fine.epochs - 1;
  {
    Pipeline p(tweaked);
    for (const auto& o : p.RunAll()) {
      const bool before = o.stage == Stage::kIngest || o.stage == Stage::kCoarse ||
                          o.stage == Stage::kDenoise || o.stage == Stage::kTrainPrelim ||
                          o.stage == Stage::kAugment;
      if (before) CHECK_FALSE(o.executed);
      if (o.stage == Stage::kTrainFine) CHECK(o.executed);
    }
  }

  // The report grid has a header, a rule and one row per method.
  const auto report = EmitReport(cfg);
  for (const char* m : {"CFC", "GCN_softmax", "GCN_sigmoid", "GCN_softmax_tau", "GCN_sigmoid_tau"}) {
    CHECK(report.find(m) != std::string::npos);
  }
  const auto eval = json::parse(first_eval);
  REQUIRE(eval["methods"].size() == 5);
  for (const auto& m : eval["methods"]) {
    const auto r = EvalReportFromJson(m["report"]);
    CHECK(ToJson(r) == m["report"]);
  }
}

TEST_CASE("strict mode and the lock file") {
  TempDir dir;
  const auto cfg = SmallFixture(dir);
  {
    Pipeline p(cfg);
    // A second runner on the same directory is refused while the first lives.
    CHECK_THROWS_WITH_AS(Pipeline{cfg}, doctest::Contains("in use"), Error);
  }
  CHECK_FALSE(fs::exists(cfg.artifacts_dir / ".cfc.lock"));

  auto changed = cfg;
  changed.mixup.alpha = 0.25;
  CHECK_THROWS_AS((Pipeline{changed, true}), ConfigMismatchError);
  CHECK_FALSE(fs::exists(cfg.artifacts_dir / ".cfc.lock"));
  CHECK_NOTHROW((Pipeline{changed, false}));
  CHECK_NOTHROW((Pipeline{changed, true}));

  const auto resolved = json::parse(ReadFile(cfg.artifacts_dir / "resolved.json"));
  CHECK(resolved["mixup"]["alpha"] == 0.25);
}

TEST_CASE("manifest JSON round-trip") {
  RunManifest m;
  m.config_hash = "abc";
  m.config = {{"k", 1}};
  m.stages["ingest"] = {"h1", {"nodes.jsonl"}, 0.5, "2026-01-01T00:00:00Z"};
  const auto back = RunManifest::FromJson(m.ToJson());
  CHECK(back.tool_version == kToolVersion);
  CHECK(back.config_hash == "abc");
  CHECK(back.config == m.config);
  CHECK(back.stages.at("ingest").outputs == std::vector<std::string>{"nodes.jsonl"});
  CHECK(back.stages.at("ingest").completed_at == "2026-01-01T00:00:00Z");
}
