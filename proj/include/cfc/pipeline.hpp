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
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cfc/coarse.hpp"
#include "cfc/denoise_augment.hpp"
#include "cfc/gcn.hpp"
#include "cfc/llm_gateway.hpp"

namespace cfc {

inline constexpr const char* kToolVersion = "0.1.0";

struct DatasetPaths {
  std::filesystem::path nodes;
  std::filesystem::path edges;
  std::optional<std::filesystem::path> features;
};

struct SplitSpec {
  std::vector<std::string> id_classes;
  std::vector<std::string> ood_classes;
  std::uint64_t seed = 0;
  double train_frac = 0.5;
  double val_frac = 0.4;
};

struct MergeConfig {
  double sim_threshold = 0.5;
  std::optional<std::int64_t> min_count;  // default: max(2, ceil(1% of OOD candidates))
};

struct RunConfig {
  DatasetPaths dataset;
  SplitSpec split;
  CoarseConfig coarse;
  std::optional<std::filesystem::path> templates_dir;
  PropagationConfig propagation;
  MixupConfig mixup;
  TrainConfig train_prelim;
  TrainConfig train_fine;
  MergeConfig merge;
  GatewayConfig gateway;
  std::filesystem::path artifacts_dir;
};

/// Parses and validates a JSON config. Unknown keys, type errors and missing
/// required fields (dataset paths, class lists, split.seed) raise
/// ValidationError. Relative paths resolve against the config's directory.
RunConfig ParseRunConfig(const nlohmann::json& j, const std::filesystem::path& base_dir);
RunConfig LoadRunConfig(const std::filesystem::path& path);

/// Fully resolved config, every default filled in.
nlohmann::json ToJson(const RunConfig& cfg);

enum class Stage {
  kIngest,
  kCoarse,
  kDenoise,
  kTrainPrelim,
  kAugment,
  kTrainFine,
  kDetect,
  kClassifyOod,
  kEval,
};

/// Execution order used by run-all.
const std::vector<Stage>& StageOrder();
std::string StageName(Stage s);
Stage ParseStage(const std::string& name);
/// Stages whose artifacts `s` reads.
std::vector<Stage> Upstream(Stage s);

struct StageRecord {
  std::string input_hash;
  std::vector<std::string> outputs;  // file names inside artifacts_dir
  double wall_time = 0.0;
  std::string completed_at;
};

struct RunManifest {
  std::string tool_version = kToolVersion;
  std::string config_hash;
  nlohmann::json config;
  std::map<std::string, StageRecord> stages;

  nlohmann::json ToJson() const;
  static RunManifest FromJson(const nlohmann::json& j);
};

class MissingArtifactError : public Error {
 public:
  using Error::Error;
};

class ConfigMismatchError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

struct StageOutcome {
  Stage stage;
  bool executed = false;  // false: inputs unchanged, skipped
};

/// Resumable stage runner that owns `cfg.artifacts_dir` for its lifetime.
class Pipeline {
 public:
  Pipeline(RunConfig cfg, bool strict = false);
  ~Pipeline();

  Pipeline(const Pipeline&) = delete;
  Pipeline& operator=(const Pipeline&) = delete;

  StageOutcome RunStage(Stage s);
  std::vector<StageOutcome> RunAll();

  const RunManifest& manifest() const { return manifest_; }
  const RunConfig& config() const { return cfg_; }

 private:
  std::string InputHash(Stage s) const;
  bool UpToDate(Stage s, const std::string& input_hash) const;
  void SaveManifest() const;

  RunConfig cfg_;
  RunManifest manifest_;
  std::filesystem::path lock_path_;
};

/// Table-style text rendering of `eval.json` in the artifacts directory.
std::string EmitReport(const RunConfig& cfg);

}  // namespace cfc
