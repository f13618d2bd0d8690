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

// Writes the synthetic demo dataset, mock LLM script and a ready-to-run config.

#include <iostream>

#include <CLI11.hpp>

#include "cfc/fixture.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Generate the synthetic CFC demo fixture"};
  std::string dir;
  cfc::FixtureOptions opt;
  app.add_option("dir", dir, "Output directory")->required();
  app.add_option("--seed", opt.seed, "Graph and mock-script seed");
  app.add_option("--split-seed", opt.split_seed, "Seed written into config.json");
  app.add_option("--nodes-per-class", opt.nodes_per_class, "Nodes per ID topic");
  app.add_option("--ood-nodes-per-class", opt.ood_nodes_per_class, "Nodes per OOD topic");
  app.add_option("--precision", opt.precision, "Mock detector precision on queried nodes");
  app.add_option("--recall", opt.recall, "Mock detector recall on queried nodes");
  CLI11_PARSE(app, argc, argv);

  try {
    const auto s = cfc::WriteFixture(dir, opt);
    std::cout << "wrote " << dir << ": " << s.flagged_true << " of " << s.queried_ood
              << " queried OOD nodes flagged, " << s.flagged_false << " false flags\n";
  } catch (const std::exception& e) {
    std::cerr << "cfc_make_fixture: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
