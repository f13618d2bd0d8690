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

// cfc <stage|run-all|validate|report> --config <path> [--strict] [--artifacts <dir>]
//
// Exit status: 0 success, 1 validation error, 2 runtime failure.

#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "cfc/pipeline.hpp"

namespace {

constexpr int kValidationExit = 1;
constexpr int kRuntimeExit = 2;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Coarse-to-fine open-set node classification"};
  app.require_subcommand(1);

  std::string config_path;
  std::string artifacts;
  bool strict = false;

  const std::vector<std::pair<std::string, std::string>> commands = {
      {"ingest", "Load the dataset and write the ID/OOD split"},
      {"coarse", "Ask the LLM which val/test nodes are OOD"},
      {"denoise", "Drop coarse OOD candidates that label propagation pulls into ID classes"},
      {"train-prelim", "Train the C-class GCNs used for boundary selection and baselines"},
      {"augment", "Synthesize OOD embeddings between boundary nodes and the OOD center"},
      {"train-fine", "Train the (C+1)-class GCN"},
      {"detect", "Predict ID class or OOD for every node"},
      {"classify-ood", "Build the merged OOD label space and label detected OOD nodes"},
      {"eval", "Score CFC and threshold baselines on the test split"},
      {"run-all", "Run every stage in order, skipping those whose inputs are unchanged"},
      {"validate", "Print the fully resolved configuration"},
      {"report", "Print the results table from eval.json"},
  };
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config_path, "Run configuration (JSON)")->required();
    sub->add_option("--artifacts", artifacts, "Override artifacts_dir");
    sub->add_flag("--strict", strict, "Fail if the config differs from the manifest's snapshot");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kValidationExit;
  }
  const std::string command = app.get_subcommands().front()->get_name();

  try {
    cfc::RunConfig cfg = cfc::LoadRunConfig(config_path);
    if (!artifacts.empty()) cfg.artifacts_dir = std::filesystem::absolute(artifacts).lexically_normal();

    if (command == "validate") {
      std::cout << cfc::ToJson(cfg).dump(2) << '\n';
      return 0;
    }
    if (command == "report") {
      std::cout << cfc::EmitReport(cfg);
      return 0;
    }

    cfc::Pipeline pipeline(cfg, strict);
    std::vector<cfc::StageOutcome> outcomes;
    if (command == "run-all") {
      outcomes = pipeline.RunAll();
    } else {
      outcomes.push_back(pipeline.RunStage(cfc::ParseStage(command)));
    }
    for (const auto& o : outcomes) {
      std::cerr << (o.executed ? "ran     " : "cached  ") << cfc::StageName(o.stage) << '\n';
    }
    if (command == "run-all" || command == "eval") std::cout << cfc::EmitReport(cfg);
    return 0;
  } catch (const cfc::ValidationError& e) {
    std::cerr << "cfc: " << e.what() << '\n';
    return kValidationExit;
  } catch (const std::exception& e) {
    std::cerr << "cfc: " << e.what() << '\n';
    return kRuntimeExit;
  }
}
