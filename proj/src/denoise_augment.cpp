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

#include "cfc/denoise_augment.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "cfc/random.hpp"

namespace cfc {
namespace {
using json = nlohmann::json;
}  // namespace

void PropagationConfig::Validate() const {
  if (steps < 0) throw ValidationError("propagation.steps must be >= 0");
}

void MixupConfig::Validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ValidationError("mixup.alpha must be in [0, 1]");
  if (boundary_count < 1) throw ValidationError("mixup.boundary_count must be >= 1");
  if (synth_count < 1) throw ValidationError("mixup.synth_count must be >= 1");
}

LabelMatrix MakeInitialLabels(std::int64_t num_nodes, int class_count,
                              const std::vector<NodeId>& train_ids,
                              const std::vector<int>& train_classes,
                              const std::vector<NodeId>& ood_candidates) {
  if (train_ids.size() != train_classes.size()) {
    throw DimensionError("train_ids and train_classes differ in length");
  }
  LabelMatrix y;
  y.class_count = class_count;
  y.values = Matrix::Zero(num_nodes, class_count + 1);
  std::set<NodeId> train(train_ids.begin(), train_ids.end());
  for (std::size_t i = 0; i < train_ids.size(); ++i) {
    const int c = train_classes[i];
    if (c < 0 || c >= class_count) throw ValidationError("train class index out of range");
    y.values(train_ids[i], c) = 1.0;
  }
  for (const auto id : ood_candidates) {
    if (train.count(id)) throw ValidationError("OOD candidate " + std::to_string(id) + " is a train node");
    y.values(id, class_count) = 1.0;
  }
  y.clamp_ids.assign(train.begin(), train.end());
  return y;
}

LabelMatrix LabelPropagate(const SparseMatrix& rw_adj, const LabelMatrix& init,
                           const PropagationConfig& cfg) {
  cfg.Validate();
  const auto n = init.values.rows();
  if (rw_adj.rows() != n || rw_adj.cols() != n) {
    throw DimensionError("propagation matrix is " + std::to_string(rw_adj.rows()) + "x" +
                         std::to_string(rw_adj.cols()) + ", labels have " + std::to_string(n) +
                         " rows");
  }
  std::vector<NodeId> reset(init.clamp_ids);
  const auto& off = rw_adj.row_offsets();
  for (std::int64_t i = 0; i < n; ++i) {
    if (off[i] == off[i + 1]) reset.push_back(i);
  }
  std::sort(reset.begin(), reset.end());
  reset.erase(std::unique(reset.begin(), reset.end()), reset.end());

  LabelMatrix y = init;
  for (int k = 0; k < cfg.steps; ++k) {
    y.values = Spmm(rw_adj, y.values);
    for (const auto id : reset) y.values.row(id) = init.values.row(id);
  }
  return y;
}

std::vector<DenoiseVerdict> DenoiseVerdicts(const LabelMatrix& propagated,
                                            const std::vector<NodeId>& candidates) {
  const int ood = propagated.ood_column();
  if (propagated.values.cols() != ood + 1) throw DimensionError("label matrix lacks the OOD column");
  std::vector<NodeId> ids(candidates);
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  std::vector<DenoiseVerdict> out;
  out.reserve(ids.size());
  for (const auto id : ids) {
    const auto row = propagated.values.row(id);
    const double best = row.maxCoeff();
    DenoiseVerdict v;
    v.node_id = id;
    v.kept = row(ood) >= best;
    if (v.kept) {
      v.argmax = ood;
    } else {
      Eigen::Index idx = 0;
      row.maxCoeff(&idx);
      v.argmax = static_cast<int>(idx);
    }
    out.push_back(v);
  }
  return out;
}

std::vector<NodeId> DenoiseOod(const LabelMatrix& propagated, const std::vector<NodeId>& candidates) {
  std::vector<NodeId> kept;
  for (const auto& v : DenoiseVerdicts(propagated, candidates)) {
    if (v.kept) kept.push_back(v.node_id);
  }
  return kept;
}

void WriteDenoiseVerdicts(const std::filesystem::path& path, const std::vector<DenoiseVerdict>& v) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& d : v) {
    out << json{{"node_id", d.node_id}, {"kept", d.kept}, {"argmax", d.argmax}}.dump() << '\n';
  }
}

std::vector<DenoiseVerdict> ReadDenoiseVerdicts(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  std::vector<DenoiseVerdict> v;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto r = json::parse(line);
    v.push_back({r.at("node_id").get<NodeId>(), r.at("kept").get<bool>(), r.at("argmax").get<int>()});
  }
  return v;
}

// ---------------------------------------------------------------------------
// Augmentation

std::vector<NodeId> SelectBoundaryNodes(const std::map<NodeId, double>& train_confidences,
                                        int count) {
  if (train_confidences.empty()) throw ValidationError("empty confidence map");
  if (count < 1) throw ValidationError("boundary count must be >= 1");
  std::vector<std::pair<double, NodeId>> ranked;
  ranked.reserve(train_confidences.size());
  for (const auto& [id, conf] : train_confidences) ranked.emplace_back(conf, id);
  std::sort(ranked.begin(), ranked.end());
  const auto k = std::min(ranked.size(), static_cast<std::size_t>(count));
  std::vector<NodeId> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) out.push_back(ranked[i].second);
  return out;
}

Vector OodCenter(const Matrix& hidden, const std::vector<NodeId>& ood_ids) {
  if (ood_ids.empty()) throw ValidationError("OOD center of an empty set");
  Vector sum = Vector::Zero(hidden.cols());
  for (const auto id : ood_ids) {
    if (id < 0 || id >= hidden.rows()) throw DimensionError("OOD id outside hidden matrix");
    sum += hidden.row(id).transpose();
  }
  return sum / static_cast<double>(ood_ids.size());
}

Vector MixupPoint(double alpha, const Eigen::Ref<const Vector>& boundary,
                  const Eigen::Ref<const Vector>& center) {
  if (boundary.size() != center.size()) throw DimensionError("mixup operands differ in length");
  const double beta = 1.0 - alpha;
  Vector out(boundary.size());
  for (Eigen::Index j = 0; j < boundary.size(); ++j) out(j) = alpha * boundary(j) + beta * center(j);
  return out;
}

SyntheticOODSet MixupAugment(const Matrix& hidden, const std::vector<NodeId>& boundary_ids,
                             const Vector& center, int ood_label, const MixupConfig& cfg) {
  if (cfg.synth_count == 0) throw ValidationError("synth_count must be >= 1");
  cfg.Validate();
  if (boundary_ids.empty()) throw ValidationError("no boundary nodes to mix");
  if (center.size() != hidden.cols()) throw DimensionError("center dimension differs from hidden");

  std::vector<NodeId> order(boundary_ids);
  Rng rng(cfg.seed);
  rng.Shuffle(std::span<NodeId>(order));

  SyntheticOODSet s;
  s.label = ood_label;
  s.center = center;
  s.embeddings.resize(cfg.synth_count, hidden.cols());
  s.provenance.reserve(static_cast<std::size_t>(cfg.synth_count));
  for (int r = 0; r < cfg.synth_count; ++r) {
    const NodeId b = order[static_cast<std::size_t>(r) % order.size()];
    s.embeddings.row(r) = MixupPoint(cfg.alpha, hidden.row(b).transpose(), center).transpose();
    s.provenance.push_back({b, cfg.alpha});
  }
  return s;
}

void WriteSyntheticSet(const std::filesystem::path& bin_path,
                       const std::filesystem::path& sidecar_path, const SyntheticOODSet& s) {
  WriteMatrixBinary(bin_path, s.embeddings);
  std::ofstream out(sidecar_path);
  if (!out) throw Error("cannot write " + sidecar_path.string());
  std::vector<double> center(s.center.data(), s.center.data() + s.center.size());
  out << json{{"label", s.label}, {"center", center}, {"rows", s.size()}}.dump() << '\n';
  for (std::size_t r = 0; r < s.provenance.size(); ++r) {
    out << json{{"row", r}, {"boundary_id", s.provenance[r].boundary_id},
                {"alpha", s.provenance[r].alpha}}
               .dump()
        << '\n';
  }
}

SyntheticOODSet ReadSyntheticSet(const std::filesystem::path& bin_path,
                                 const std::filesystem::path& sidecar_path) {
  SyntheticOODSet s;
  s.embeddings = ReadMatrixBinary(bin_path);
  std::ifstream in(sidecar_path);
  if (!in) throw ValidationError("cannot open " + sidecar_path.string());
  std::string line;
  if (!std::getline(in, line)) throw ValidationError(sidecar_path.string() + ": missing header");
  const auto header = json::parse(line);
  s.label = header.at("label").get<int>();
  const auto center = header.at("center").get<std::vector<double>>();
  s.center = Eigen::Map<const Vector>(center.data(), static_cast<Eigen::Index>(center.size()));
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto r = json::parse(line);
    s.provenance.push_back({r.at("boundary_id").get<NodeId>(), r.at("alpha").get<double>()});
  }
  if (static_cast<std::int64_t>(s.provenance.size()) != s.size()) {
    throw ValidationError("synthetic provenance rows differ from embedding rows");
  }
  return s;
}

}  // namespace cfc
