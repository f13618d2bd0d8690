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

#include "cfc/pipeline.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <ctime>
#include <fstream>
#include <set>
#include <sstream>

#include "cfc/hash.hpp"
#include "cfc/labelspace.hpp"
#include "cfc/metrics.hpp"

namespace cfc {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

// ---------------------------------------------------------------------------
// Config parsing

class Section {
 public:
  Section(const json& j, std::string prefix) : j_(j), prefix_(std::move(prefix)) {
    if (!j_.is_object()) throw ValidationError("config " + Where() + " must be an object");
  }

  void Allow(std::initializer_list<std::string_view> keys) const {
    for (const auto& [k, _] : j_.items()) {
      if (std::find(keys.begin(), keys.end(), k) == keys.end()) {
        throw ValidationError("unknown config key \"" + prefix_ + k + "\"");
      }
    }
  }

  bool Has(const std::string& key) const { return j_.contains(key) && !j_.at(key).is_null(); }

  const json& Raw(const std::string& key) const {
    if (!Has(key)) throw ValidationError("missing required config field \"" + prefix_ + key + "\"");
    return j_.at(key);
  }

  std::optional<double> Number(const std::string& key) const {
    if (!Has(key)) return std::nullopt;
    const auto& v = j_.at(key);
    if (!v.is_number()) TypeError(key, "a number");
    return v.get<double>();
  }

  std::optional<std::int64_t> Integer(const std::string& key) const {
    if (!Has(key)) return std::nullopt;
    const auto& v = j_.at(key);
    if (!v.is_number_integer()) TypeError(key, "an integer");
    return v.get<std::int64_t>();
  }

  std::optional<std::string> String(const std::string& key) const {
    if (!Has(key)) return std::nullopt;
    const auto& v = j_.at(key);
    if (!v.is_string()) TypeError(key, "a string");
    return v.get<std::string>();
  }

  std::vector<std::string> StringList(const std::string& key) const {
    const auto& v = Raw(key);
    if (!v.is_array()) TypeError(key, "an array of strings");
    std::vector<std::string> out;
    for (const auto& e : v) {
      if (!e.is_string()) TypeError(key, "an array of strings");
      out.push_back(e.get<std::string>());
    }
    return out;
  }

  std::optional<Section> Sub(const std::string& key) const {
    if (!Has(key)) return std::nullopt;
    return Section(j_.at(key), prefix_ + key + ".");
  }

 private:
  std::string Where() const { return prefix_.empty() ? "root" : "\"" + prefix_.substr(0, prefix_.size() - 1) + "\""; }

  [[noreturn]] void TypeError(const std::string& key, const char* expected) const {
    throw ValidationError("config field \"" + prefix_ + key + "\" must be " + expected);
  }

  const json& j_;
  std::string prefix_;
};

template <typename T>
void Set(T& dst, const std::optional<T>& v) {
  if (v) dst = *v;
}

void SetInt(int& dst, const std::optional<std::int64_t>& v) {
  if (v) dst = static_cast<int>(*v);
}

fs::path Resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return (path.is_absolute() ? path : base / path).lexically_normal();
}

fs::path RequireExisting(const fs::path& p, const std::string& what) {
  if (!fs::exists(p)) throw ValidationError(what + " not found: " + p.string());
  return p;
}

void ParseTrain(const std::optional<Section>& s, TrainConfig& t) {
  if (!s) return;
  s->Allow({"learning_rate", "weight_decay", "epochs", "hidden_dim", "early_stop_patience"});
  Set(t.learning_rate, s->Number("learning_rate"));
  Set(t.weight_decay, s->Number("weight_decay"));
  SetInt(t.epochs, s->Integer("epochs"));
  SetInt(t.hidden_dim, s->Integer("hidden_dim"));
  SetInt(t.early_stop_patience, s->Integer("early_stop_patience"));
}

json TrainJson(const TrainConfig& t) {
  return {{"learning_rate", t.learning_rate}, {"weight_decay", t.weight_decay},
          {"epochs", t.epochs},               {"hidden_dim", t.hidden_dim},
          {"early_stop_patience", t.early_stop_patience}};
}

json OptionalPath(const std::optional<fs::path>& p) {
  return p ? json(p->string()) : json(nullptr);
}

// ---------------------------------------------------------------------------
// Artifacts

constexpr const char* kManifest = "manifest.json";
constexpr const char* kResolved = "resolved.json";
constexpr const char* kLock = ".cfc.lock";

std::vector<std::string> Outputs(Stage s, const RunConfig& cfg) {
  switch (s) {
    case Stage::kIngest:
      return {"nodes.jsonl", "edges.jsonl", "features.bin", "split.json"};
    case Stage::kCoarse:
      if (cfg.coarse.mode == RejectMode::kHard) {
        return {"coarse.jsonl", "candidates.json", "coarse_exchanges.jsonl"};
      }
      return {"coarse.jsonl", "coarse_exchanges.jsonl"};
    case Stage::kDenoise:
      return {"denoised.jsonl"};
    case Stage::kTrainPrelim:
      return {"prelim.ckpt", "prelim_history.jsonl", "prelim_sigmoid.ckpt",
              "prelim_sigmoid_history.jsonl"};
    case Stage::kAugment:
      return {"synth.bin", "synth.jsonl"};
    case Stage::kTrainFine:
      return {"fine.ckpt", "fine_history.jsonl"};
    case Stage::kDetect:
      return {"detect.jsonl"};
    case Stage::kClassifyOod:
      return {"post_labels.json", "ood_assignments.jsonl", "classify_exchanges.jsonl"};
    case Stage::kEval:
      return {"eval.json", "report.txt"};
  }
  return {};
}

// Artifacts a stage reads, all produced by upstream stages.
std::vector<std::string> Inputs(Stage s) {
  switch (s) {
    case Stage::kIngest:
      return {};
    case Stage::kCoarse:
      return {"nodes.jsonl", "split.json"};
    case Stage::kDenoise:
      return {"nodes.jsonl", "edges.jsonl", "split.json", "coarse.jsonl"};
    case Stage::kTrainPrelim:
      return {"nodes.jsonl", "edges.jsonl", "features.bin", "split.json"};
    case Stage::kAugment:
      return {"nodes.jsonl", "edges.jsonl", "features.bin", "split.json", "denoised.jsonl",
              "prelim.ckpt"};
    case Stage::kTrainFine:
      return {"nodes.jsonl", "edges.jsonl", "features.bin", "split.json", "denoised.jsonl",
              "synth.bin", "synth.jsonl"};
    case Stage::kDetect:
      return {"nodes.jsonl", "edges.jsonl", "features.bin", "split.json", "fine.ckpt"};
    case Stage::kClassifyOod:
      return {"nodes.jsonl", "coarse.jsonl", "detect.jsonl"};
    case Stage::kEval:
      return {"nodes.jsonl",      "edges.jsonl",         "features.bin",    "split.json",
              "detect.jsonl",     "post_labels.json",    "ood_assignments.jsonl",
              "prelim.ckpt",      "prelim_sigmoid.ckpt"};
  }
  return {};
}

std::string UtcNow() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void WriteText(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

json ReadJsonFile(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error("malformed JSON in " + path.string() + ": " + e.what());
  }
}

PromptTemplates Templates(const RunConfig& cfg) {
  return cfg.templates_dir ? PromptTemplates::LoadDir(*cfg.templates_dir)
                           : PromptTemplates::Defaults();
}

std::string TemplatesHash(const RunConfig& cfg) {
  const auto t = Templates(cfg);
  return Sha256Hex(json{t.easy_reject, t.hard_reject, t.major_category, t.candidate_ood,
                        t.ood_classification}
                       .dump());
}

json GatewayChatJson(const GatewayConfig& g) {
  json j = {{"mode", g.mode == GatewayMode::kMock ? "mock" : "live"},
            {"model", g.model_name},
            {"temperature", g.temperature}};
  if (g.mode == GatewayMode::kLive) j["base_url"] = g.base_url;
  if (g.mode == GatewayMode::kMock && g.mock_fixture_path) {
    j["fixture_sha256"] = Sha256File(*g.mock_fixture_path);
  }
  return j;
}

// Everything in the resolved config that changes the stage's output.
json StageConfig(Stage s, const RunConfig& cfg) {
  const json full = ToJson(cfg);
  switch (s) {
    case Stage::kIngest: {
      json j = {{"split", full["split"]}};
      j["nodes_sha256"] = Sha256File(cfg.dataset.nodes);
      j["edges_sha256"] = Sha256File(cfg.dataset.edges);
      if (cfg.dataset.features) {
        j["features_sha256"] = Sha256File(*cfg.dataset.features);
      } else {
        j["embedding"] = {{"mode", full["gateway"]["mode"]},
                          {"model", cfg.gateway.embedding_model},
                          {"dim", cfg.gateway.embedding_dim}};
      }
      return j;
    }
    case Stage::kCoarse:
      return {{"coarse", full["coarse"]},
              {"templates", TemplatesHash(cfg)},
              {"gateway", GatewayChatJson(cfg.gateway)}};
    case Stage::kDenoise:
      return {{"propagation", full["propagation"]}};
    case Stage::kTrainPrelim:
      return {{"train", full["train_prelim"]}, {"seed", cfg.split.seed}};
    case Stage::kAugment:
      return {{"mixup", full["mixup"]}, {"seed", cfg.split.seed}};
    case Stage::kTrainFine:
      return {{"train", full["train_fine"]}, {"seed", cfg.split.seed}};
    case Stage::kDetect:
      return json::object();
    case Stage::kClassifyOod:
      return {{"merge", full["merge"]},
              {"max_parse_retries", cfg.coarse.max_parse_retries},
              {"text_budget", cfg.coarse.text_budget},
              {"templates", TemplatesHash(cfg)},
              {"gateway", GatewayChatJson(cfg.gateway)}};
    case Stage::kEval:
      return json::object();
  }
  return json::object();
}

// ---------------------------------------------------------------------------
// Shared stage state

void WriteSplit(const fs::path& path, const SplitAssignment& s) {
  const json j = {{"train_ids", s.train_ids}, {"val_ids", s.val_ids},
                  {"test_ids", s.test_ids},   {"id_classes", s.id_classes},
                  {"ood_classes", s.ood_classes}};
  WriteText(path, j.dump(2) + "\n");
}

SplitAssignment ReadSplit(const fs::path& path) {
  const json j = ReadJsonFile(path);
  SplitAssignment s;
  s.train_ids = j.at("train_ids").get<std::vector<NodeId>>();
  s.val_ids = j.at("val_ids").get<std::vector<NodeId>>();
  s.test_ids = j.at("test_ids").get<std::vector<NodeId>>();
  s.id_classes = j.at("id_classes").get<std::vector<std::string>>();
  s.ood_classes = j.at("ood_classes").get<std::vector<std::string>>();
  return s;
}

struct Workspace {
  fs::path dir;
  Graph graph;
  SplitAssignment split;
  std::map<std::string, int> class_index;  // ID classes -> 0..C-1
  int C = 0;

  fs::path operator/(const std::string& name) const { return dir / name; }

  // Ground truth: ID class index, or C for OOD classes.
  int Truth(NodeId id) const {
    const auto& label = graph.labels.at(id);
    if (!label) throw ValidationError("node " + std::to_string(id) + " has no label");
    const auto it = class_index.find(*label);
    return it == class_index.end() ? C : it->second;
  }

  std::vector<int> TruthVector(const std::vector<NodeId>& ids) const {
    std::vector<int> v(graph.num_nodes, -1);
    for (const auto id : ids) v[id] = Truth(id);
    return v;
  }

  std::vector<NodeId> EvalIds() const {
    std::vector<NodeId> ids = split.val_ids;
    ids.insert(ids.end(), split.test_ids.begin(), split.test_ids.end());
    std::sort(ids.begin(), ids.end());
    return ids;
  }
};

Workspace OpenWorkspace(const fs::path& dir, bool with_features) {
  Workspace w;
  w.dir = dir;
  w.graph = LoadGraph(dir / "nodes.jsonl", dir / "edges.jsonl",
                      with_features ? std::optional<fs::path>(dir / "features.bin") : std::nullopt);
  w.split = ReadSplit(dir / "split.json");
  w.C = static_cast<int>(w.split.id_classes.size());
  for (int c = 0; c < w.C; ++c) w.class_index[w.split.id_classes[c]] = c;
  return w;
}

std::vector<NodeId> KeptOod(const fs::path& denoised) {
  std::vector<NodeId> kept;
  for (const auto& v : ReadDenoiseVerdicts(denoised)) {
    if (v.kept) kept.push_back(v.node_id);
  }
  return kept;
}

GatewayConfig StageGateway(const RunConfig& cfg, const fs::path& log_path) {
  GatewayConfig g = cfg.gateway;
  g.exchange_log_path = log_path;
  // The log is append-only across reruns, but must exist even when no call is made.
  std::ofstream touch(log_path, std::ios::app);
  if (!touch) throw Error("cannot write " + log_path.string());
  return g;
}

struct DetectRecord {
  NodeId node_id = 0;
  std::string split;
  int predicted = 0;
  double ood_prob = 0.0;
};

std::vector<DetectRecord> ReadDetect(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path.string());
  std::vector<DetectRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const json j = json::parse(line);
    out.push_back({j.at("node_id").get<NodeId>(), j.at("split").get<std::string>(),
                   j.at("predicted").get<int>(), j.at("ood_prob").get<double>()});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Stages

void RunIngest(const RunConfig& cfg, const fs::path& dir) {
  Graph g = LoadGraph(cfg.dataset.nodes, cfg.dataset.edges, cfg.dataset.features);
  if (!g.has_features()) {
    LlmGateway gateway(cfg.gateway);
    g.features = gateway.Embed(g.node_text);
  }
  const auto split = SplitDataset(g, cfg.split.id_classes, cfg.split.ood_classes, cfg.split.seed,
                                  cfg.split.train_frac, cfg.split.val_frac);
  SaveNodes(g, dir / "nodes.jsonl");
  SaveEdges(g, dir / "edges.jsonl");
  WriteMatrixBinary(dir / "features.bin", g.features);
  WriteSplit(dir / "split.json", split);
}

void RunCoarse(const RunConfig& cfg, const fs::path& dir) {
  const Workspace w = OpenWorkspace(dir, false);
  const auto templates = Templates(cfg);
  LlmGateway gateway(StageGateway(cfg, dir / "coarse_exchanges.jsonl"));
  std::optional<HardRejectSpace> space;
  if (cfg.coarse.mode == RejectMode::kHard) {
    space = GenerateHardRejectSpace(w.split.id_classes, cfg.coarse.candidate_count, gateway,
                                    templates);
    WriteText(dir / "candidates.json",
              json{{"major_category", space->major_category},
                   {"candidate_ood_labels", space->candidate_ood_labels}}
                      .dump(2) + "\n");
  }
  const auto result =
      CoarseDetect(w.graph, w.EvalIds(), w.split.id_classes, cfg.coarse, gateway, templates, space);
  WriteCoarseResult(dir / "coarse.jsonl", result);
}

void RunDenoise(const RunConfig& cfg, const fs::path& dir) {
  const Workspace w = OpenWorkspace(dir, false);
  const auto coarse = ReadCoarseResult(dir / "coarse.jsonl");
  std::vector<int> train_classes;
  for (const auto id : w.split.train_ids) train_classes.push_back(w.Truth(id));
  const auto init = MakeInitialLabels(w.graph.num_nodes, w.C, w.split.train_ids, train_classes,
                                      coarse.ood_ids);
  const auto propagated = LabelPropagate(RwNormalizeAdjacency(w.graph), init, cfg.propagation);
  WriteDenoiseVerdicts(dir / "denoised.jsonl", DenoiseVerdicts(propagated, coarse.ood_ids));
}

TrainingData IdTrainingData(const Workspace& w) {
  TrainingData d;
  d.labels.assign(w.graph.num_nodes, -1);
  for (const auto id : w.split.train_ids) d.labels[id] = w.Truth(id);
  d.train_mask = w.split.train_ids;
  d.val_ids = w.split.val_ids;
  d.val_truth = w.TruthVector(w.split.val_ids);
  d.out_dim = w.C;
  return d;
}

void RunTrainPrelim(const RunConfig& cfg, const fs::path& dir) {
  const Workspace w = OpenWorkspace(dir, true);
  const auto a_hat = SymNormalizeAdjacency(w.graph);
  const auto data = IdTrainingData(w);
  TrainConfig tc = cfg.train_prelim;
  tc.seed = cfg.split.seed;
  const auto soft = Train(a_hat, w.graph.features, data, tc, OutputKind::kSoftmax);
  WriteCheckpoint(dir / "prelim.ckpt", soft.params);
  WriteHistory(dir / "prelim_history.jsonl", soft.history);
  const auto sig = Train(a_hat, w.graph.features, data, tc, OutputKind::kSigmoid);
  WriteCheckpoint(dir / "prelim_sigmoid.ckpt", sig.params);
  WriteHistory(dir / "prelim_sigmoid_history.jsonl", sig.history);
}

void RunAugment(const RunConfig& cfg, const fs::path& dir) {
  const Workspace w = OpenWorkspace(dir, true);
  const auto kept = KeptOod(dir / "denoised.jsonl");
  if (kept.empty()) {
    throw Error("no OOD candidates survived denoising; the OOD center is undefined");
  }
  const auto params = ReadCheckpoint(dir / "prelim.ckpt");
  const auto cache = Forward(params, SymNormalizeAdjacency(w.graph), w.graph.features);
  std::map<NodeId, double> confidence;
  for (const auto id : w.split.train_ids) confidence[id] = cache.z_real.row(id).maxCoeff();
  const auto boundary = SelectBoundaryNodes(confidence, cfg.mixup.boundary_count);
  const auto center = OodCenter(cache.h1, kept);
  MixupConfig mc = cfg.mixup;
  mc.seed = cfg.split.seed;
  const auto synth = MixupAugment(cache.h1, boundary, center, w.C, mc);
  WriteSyntheticSet(dir / "synth.bin", dir / "synth.jsonl", synth);
}

void RunTrainFine(const RunConfig& cfg, const fs::path& dir) {
  const Workspace w = OpenWorkspace(dir, true);
  const auto synth = ReadSyntheticSet(dir / "synth.bin", dir / "synth.jsonl");
  TrainingData d = IdTrainingData(w);
  for (const auto id : KeptOod(dir / "denoised.jsonl")) {
    d.labels[id] = w.C;
    d.train_mask.push_back(id);
  }
  std::sort(d.train_mask.begin(), d.train_mask.end());
  d.synth = &synth;
  d.out_dim = w.C + 1;
  TrainConfig tc = cfg.train_fine;
  tc.seed = cfg.split.seed;
  const auto result = Train(SymNormalizeAdjacency(w.graph), w.graph.features, d, tc);
  WriteCheckpoint(dir / "fine.ckpt", result.params);
  WriteHistory(dir / "fine_history.jsonl", result.history);
}

void RunDetect(const RunConfig&, const fs::path& dir) {
  const Workspace w = OpenWorkspace(dir, true);
  const auto params = ReadCheckpoint(dir / "fine.ckpt");
  const Matrix z = Predict(params, SymNormalizeAdjacency(w.graph), w.graph.features);
  const std::set<NodeId> val(w.split.val_ids.begin(), w.split.val_ids.end());
  std::ostringstream out;
  for (const auto id : w.EvalIds()) {
    out << json{{"node_id", id},
                {"split", val.count(id) ? "val" : "test"},
                {"predicted", ArgmaxRow(z.row(id))},
                {"ood_prob", z(id, w.C)}}
               .dump()
        << '\n';
  }
  WriteText(dir / "detect.jsonl", out.str());
}

void RunClassifyOod(const RunConfig& cfg, const fs::path& dir) {
  const Workspace w = OpenWorkspace(dir, false);
  const auto coarse = ReadCoarseResult(dir / "coarse.jsonl");
  const auto min_count = cfg.merge.min_count.value_or(
      DefaultMinCount(static_cast<std::int64_t>(coarse.ood_ids.size())));
  const auto post = MergeCategories(coarse.category_log, cfg.merge.sim_threshold, min_count);
  std::vector<NodeId> final_ood;
  for (const auto& r : ReadDetect(dir / "detect.jsonl")) {
    if (r.split == "test" && r.predicted == w.C) final_ood.push_back(r.node_id);
  }
  LlmGateway gateway(StageGateway(cfg, dir / "classify_exchanges.jsonl"));
  const auto assignments = ClassifyOod(final_ood, w.graph, post, gateway,
                                       cfg.coarse.max_parse_retries, cfg.coarse.text_budget,
                                       Templates(cfg));
  WritePostLabelSpace(dir / "post_labels.json", post);
  WriteAssignments(dir / "ood_assignments.jsonl", assignments);
}

std::optional<double> SafeAuroc(const std::map<NodeId, double>& scores,
                                const std::map<NodeId, bool>& is_ood) {
  const auto pos = std::count_if(is_ood.begin(), is_ood.end(), [](const auto& kv) { return kv.second; });
  if (pos == 0 || pos == static_cast<std::ptrdiff_t>(is_ood.size())) return std::nullopt;
  return Auroc(scores, is_ood);
}

std::vector<std::pair<std::string, EvalReport>> ReportRows(const json& eval) {
  std::vector<std::pair<std::string, EvalReport>> rows;
  for (const auto& m : eval.at("methods")) {
    rows.emplace_back(m.at("name").get<std::string>(), EvalReportFromJson(m.at("report")));
  }
  return rows;
}

std::string RenderEval(const json& eval) {
  std::string text = RenderReportTable(ReportRows(eval));
  const auto& oc = eval.at("ood_classification");
  if (!oc.at("cluster_accuracy").is_null()) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "\nOOD cluster accuracy: %.2f (%lld true-OOD nodes)\n",
                  100.0 * oc["cluster_accuracy"].get<double>(),
                  static_cast<long long>(oc.at("n_true_ood_assigned").get<std::int64_t>()));
    text += buf;
  }
  return text;
}

void RunEval(const RunConfig&, const fs::path& dir) {
  const Workspace w = OpenWorkspace(dir, true);
  const auto a_hat = SymNormalizeAdjacency(w.graph);
  const auto& test = w.split.test_ids;

  std::map<NodeId, int> truth;
  std::map<NodeId, bool> is_ood;
  for (const auto id : test) {
    truth[id] = w.Truth(id);
    is_ood[id] = truth[id] == w.C;
  }

  json methods = json::array();
  auto add = [&](const std::string& name, const std::map<NodeId, int>& pred,
                 const std::map<NodeId, double>& score, std::optional<double> tau) {
    EvalReport r = AccuracyReport(pred, truth, w.C);
    r.auroc = SafeAuroc(score, is_ood);
    json m = {{"name", name}, {"report", ToJson(r)}};
    m["tau"] = tau ? json(*tau) : json(nullptr);
    methods.push_back(std::move(m));
  };

  std::map<NodeId, int> cfc_pred;
  std::map<NodeId, double> cfc_score;
  for (const auto& r : ReadDetect(dir / "detect.jsonl")) {
    if (r.split != "test") continue;
    cfc_pred[r.node_id] = r.predicted;
    cfc_score[r.node_id] = r.ood_prob;
  }
  add("CFC", cfc_pred, cfc_score, std::nullopt);

  std::map<NodeId, int> val_truth;
  for (const auto id : w.split.val_ids) val_truth[id] = w.Truth(id);
  const std::pair<const char*, OutputKind> baselines[] = {
      {"softmax", OutputKind::kSoftmax}, {"sigmoid", OutputKind::kSigmoid}};
  std::vector<json> tuned;
  for (const auto& [suffix, kind] : baselines) {
    const auto ckpt = dir / (kind == OutputKind::kSoftmax ? "prelim.ckpt" : "prelim_sigmoid.ckpt");
    const Matrix probs = Predict(ReadCheckpoint(ckpt), a_hat, w.graph.features, kind);
    const auto mode = kind == OutputKind::kSoftmax ? ThresholdMode::kSoftmax : ThresholdMode::kSigmoid;
    const auto score = MaxProbOodScore(probs, test);
    add(std::string("GCN_") + suffix, ThresholdBaseline(probs, test, mode, 0.0), score, 0.0);
    const double tau = w.split.val_ids.empty()
                           ? 0.5
                           : SweepThreshold(probs, w.split.val_ids, val_truth, mode).best_tau;
    add(std::string("GCN_") + suffix + "_tau", ThresholdBaseline(probs, test, mode, tau), score, tau);
  }
  // CFC, GCN_softmax, GCN_sigmoid, GCN_softmax_tau, GCN_sigmoid_tau.
  std::swap(methods[2], methods[3]);

  const auto assignments = ReadAssignments(dir / "ood_assignments.jsonl");
  std::vector<OodAssignment> true_ood;
  std::map<NodeId, std::string> true_labels;
  for (const auto& a : assignments) {
    if (w.Truth(a.node_id) != w.C) continue;
    true_ood.push_back(a);
    true_labels[a.node_id] = *w.graph.labels[a.node_id];
  }
  const auto post = ReadPostLabelSpace(dir / "post_labels.json");
  json oc = {{"cluster_accuracy",
              true_ood.empty() ? json(nullptr) : json(ClusterAccuracy(true_ood, true_labels))},
             {"n_assigned", assignments.size()},
             {"n_true_ood_assigned", true_ood.size()},
             {"post_label_space", post.merged_labels}};

  const json eval = {{"id_classes", w.split.id_classes},
                     {"ood_classes", w.split.ood_classes},
                     {"methods", methods},
                     {"ood_classification", oc}};
  WriteText(dir / "eval.json", eval.dump(2) + "\n");
  WriteText(dir / "report.txt", RenderEval(eval));
}

using StageFn = void (*)(const RunConfig&, const fs::path&);

StageFn StageFunction(Stage s) {
  switch (s) {
    case Stage::kIngest: return RunIngest;
    case Stage::kCoarse: return RunCoarse;
    case Stage::kDenoise: return RunDenoise;
    case Stage::kTrainPrelim: return RunTrainPrelim;
    case Stage::kAugment: return RunAugment;
    case Stage::kTrainFine: return RunTrainFine;
    case Stage::kDetect: return RunDetect;
    case Stage::kClassifyOod: return RunClassifyOod;
    case Stage::kEval: return RunEval;
  }
  throw Error("unknown stage");
}

}  // namespace

// ---------------------------------------------------------------------------

RunConfig ParseRunConfig(const json& j, const fs::path& base_dir) {
  const Section root(j, "");
  root.Allow({"dataset", "split", "coarse", "propagation", "mixup", "train_prelim", "train_fine",
              "merge", "gateway", "artifacts_dir"});
  RunConfig cfg;

  const auto dataset = root.Sub("dataset");
  if (!dataset) throw ValidationError("missing required config field \"dataset\"");
  dataset->Allow({"nodes", "edges", "features"});
  if (!dataset->Has("nodes")) throw ValidationError("missing required config field \"dataset.nodes\"");
  if (!dataset->Has("edges")) throw ValidationError("missing required config field \"dataset.edges\"");
  cfg.dataset.nodes = RequireExisting(Resolve(base_dir, *dataset->String("nodes")), "dataset.nodes");
  cfg.dataset.edges = RequireExisting(Resolve(base_dir, *dataset->String("edges")), "dataset.edges");
  if (const auto f = dataset->String("features")) {
    cfg.dataset.features = RequireExisting(Resolve(base_dir, *f), "dataset.features");
  }

  const auto split = root.Sub("split");
  if (!split) throw ValidationError("missing required config field \"split\"");
  split->Allow({"id_classes", "ood_classes", "seed", "train_frac", "val_frac"});
  cfg.split.id_classes = split->StringList("id_classes");
  cfg.split.ood_classes = split->StringList("ood_classes");
  const auto seed = split->Integer("seed");
  if (!seed) throw ValidationError("missing required config field \"split.seed\"");
  if (*seed < 0) throw ValidationError("config field \"split.seed\" must be non-negative");
  cfg.split.seed = static_cast<std::uint64_t>(*seed);
  Set(cfg.split.train_frac, split->Number("train_frac"));
  Set(cfg.split.val_frac, split->Number("val_frac"));
  if (cfg.split.id_classes.empty()) throw ValidationError("split.id_classes must not be empty");
  if (!(cfg.split.train_frac > 0.0 && cfg.split.train_frac < 1.0)) {
    throw ValidationError("split.train_frac must be in (0, 1)");
  }
  if (!(cfg.split.val_frac >= 0.0 && cfg.split.val_frac <= 1.0)) {
    throw ValidationError("split.val_frac must be in [0, 1]");
  }
  for (const auto& c : cfg.split.ood_classes) {
    if (std::find(cfg.split.id_classes.begin(), cfg.split.id_classes.end(), c) !=
        cfg.split.id_classes.end()) {
      throw ValidationError("class \"" + c + "\" is listed as both ID and OOD");
    }
  }

  if (const auto s = root.Sub("coarse")) {
    s->Allow({"mode", "tau", "candidate_count", "max_parse_retries", "node_budget", "text_budget",
              "templates_dir"});
    if (const auto m = s->String("mode")) {
      try {
        cfg.coarse.mode = ParseRejectMode(*m);
      } catch (const Error& e) {
        throw ValidationError(std::string("coarse.mode: ") + e.what());
      }
    }
    Set(cfg.coarse.tau, s->Number("tau"));
    SetInt(cfg.coarse.candidate_count, s->Integer("candidate_count"));
    SetInt(cfg.coarse.max_parse_retries, s->Integer("max_parse_retries"));
    cfg.coarse.node_budget = s->Integer("node_budget");
    if (const auto tb = s->Integer("text_budget")) {
      if (*tb <= 0) throw ValidationError("coarse.text_budget must be positive");
      cfg.coarse.text_budget = static_cast<std::size_t>(*tb);
    }
    if (const auto t = s->String("templates_dir")) {
      cfg.templates_dir = RequireExisting(Resolve(base_dir, *t), "coarse.templates_dir");
    }
  }
  cfg.coarse.seed = cfg.split.seed;

  if (const auto s = root.Sub("propagation")) {
    s->Allow({"steps"});
    SetInt(cfg.propagation.steps, s->Integer("steps"));
  }
  if (const auto s = root.Sub("mixup")) {
    s->Allow({"alpha", "boundary_count", "synth_count"});
    Set(cfg.mixup.alpha, s->Number("alpha"));
    SetInt(cfg.mixup.boundary_count, s->Integer("boundary_count"));
    SetInt(cfg.mixup.synth_count, s->Integer("synth_count"));
  }
  cfg.mixup.seed = cfg.split.seed;
  ParseTrain(root.Sub("train_prelim"), cfg.train_prelim);
  ParseTrain(root.Sub("train_fine"), cfg.train_fine);
  cfg.train_prelim.seed = cfg.train_fine.seed = cfg.split.seed;

  if (const auto s = root.Sub("merge")) {
    s->Allow({"sim_threshold", "min_count"});
    Set(cfg.merge.sim_threshold, s->Number("sim_threshold"));
    cfg.merge.min_count = s->Integer("min_count");
  }
  if (!(cfg.merge.sim_threshold >= 0.0 && cfg.merge.sim_threshold <= 1.0)) {
    throw ValidationError("merge.sim_threshold must be in [0, 1]");
  }
  if (cfg.merge.min_count && *cfg.merge.min_count < 1) {
    throw ValidationError("merge.min_count must be at least 1");
  }

  if (const auto s = root.Sub("gateway")) {
    s->Allow({"mode", "base_url", "model", "embedding_model", "temperature", "max_retries",
              "request_timeout", "max_concurrent", "retry_base_delay", "mock_fixture",
              "embedding_dim"});
    if (const auto m = s->String("mode")) {
      if (*m == "mock") {
        cfg.gateway.mode = GatewayMode::kMock;
      } else if (*m == "live") {
        cfg.gateway.mode = GatewayMode::kLive;
      } else {
        throw ValidationError("gateway.mode must be \"mock\" or \"live\", got \"" + *m + "\"");
      }
    }
    Set(cfg.gateway.base_url, s->String("base_url"));
    Set(cfg.gateway.model_name, s->String("model"));
    Set(cfg.gateway.embedding_model, s->String("embedding_model"));
    Set(cfg.gateway.temperature, s->Number("temperature"));
    SetInt(cfg.gateway.max_retries, s->Integer("max_retries"));
    Set(cfg.gateway.request_timeout, s->Number("request_timeout"));
    SetInt(cfg.gateway.max_concurrent, s->Integer("max_concurrent"));
    Set(cfg.gateway.retry_base_delay, s->Number("retry_base_delay"));
    SetInt(cfg.gateway.embedding_dim, s->Integer("embedding_dim"));
    if (const auto f = s->String("mock_fixture")) {
      cfg.gateway.mock_fixture_path = RequireExisting(Resolve(base_dir, *f), "gateway.mock_fixture");
    }
  }

  cfg.artifacts_dir = Resolve(base_dir, root.String("artifacts_dir").value_or("artifacts"));

  cfg.coarse.Validate();
  cfg.propagation.Validate();
  cfg.mixup.Validate();
  cfg.train_prelim.Validate();
  cfg.train_fine.Validate();
  cfg.gateway.Validate();
  return cfg;
}

RunConfig LoadRunConfig(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot read config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ValidationError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return ParseRunConfig(j, fs::absolute(path).parent_path());
}

json ToJson(const RunConfig& cfg) {
  const auto& g = cfg.gateway;
  return {
      {"dataset",
       {{"nodes", cfg.dataset.nodes.string()},
        {"edges", cfg.dataset.edges.string()},
        {"features", OptionalPath(cfg.dataset.features)}}},
      {"split",
       {{"id_classes", cfg.split.id_classes},
        {"ood_classes", cfg.split.ood_classes},
        {"seed", cfg.split.seed},
        {"train_frac", cfg.split.train_frac},
        {"val_frac", cfg.split.val_frac}}},
      {"coarse",
       {{"mode", ToString(cfg.coarse.mode)},
        {"tau", cfg.coarse.tau},
        {"candidate_count", cfg.coarse.candidate_count},
        {"max_parse_retries", cfg.coarse.max_parse_retries},
        {"node_budget", cfg.coarse.node_budget ? json(*cfg.coarse.node_budget) : json(nullptr)},
        {"text_budget", cfg.coarse.text_budget},
        {"templates_dir", OptionalPath(cfg.templates_dir)}}},
      {"propagation", {{"steps", cfg.propagation.steps}}},
      {"mixup",
       {{"alpha", cfg.mixup.alpha},
        {"boundary_count", cfg.mixup.boundary_count},
        {"synth_count", cfg.mixup.synth_count}}},
      {"train_prelim", TrainJson(cfg.train_prelim)},
      {"train_fine", TrainJson(cfg.train_fine)},
      {"merge",
       {{"sim_threshold", cfg.merge.sim_threshold},
        {"min_count", cfg.merge.min_count ? json(*cfg.merge.min_count) : json(nullptr)}}},
      {"gateway",
       {{"mode", g.mode == GatewayMode::kMock ? "mock" : "live"},
        {"base_url", g.base_url},
        {"model", g.model_name},
        {"embedding_model", g.embedding_model},
        {"temperature", g.temperature},
        {"max_retries", g.max_retries},
        {"request_timeout", g.request_timeout},
        {"max_concurrent", g.max_concurrent},
        {"retry_base_delay", g.retry_base_delay},
        {"mock_fixture", OptionalPath(g.mock_fixture_path)},
        {"embedding_dim", g.embedding_dim}}},
      {"artifacts_dir", cfg.artifacts_dir.string()},
  };
}

const std::vector<Stage>& StageOrder() {
  static const std::vector<Stage> order = {
      Stage::kIngest,    Stage::kCoarse, Stage::kDenoise,     Stage::kTrainPrelim, Stage::kAugment,
      Stage::kTrainFine, Stage::kDetect, Stage::kClassifyOod, Stage::kEval};
  return order;
}

std::string StageName(Stage s) {
  switch (s) {
    case Stage::kIngest: return "ingest";
    case Stage::kCoarse: return "coarse";
    case Stage::kDenoise: return "denoise";
    case Stage::kTrainPrelim: return "train-prelim";
    case Stage::kAugment: return "augment";
    case Stage::kTrainFine: return "train-fine";
    case Stage::kDetect: return "detect";
    case Stage::kClassifyOod: return "classify-ood";
    case Stage::kEval: return "eval";
  }
  return "?";
}

Stage ParseStage(const std::string& name) {
  for (const auto s : StageOrder()) {
    if (StageName(s) == name) return s;
  }
  throw ValidationError("unknown stage \"" + name + "\"");
}

std::vector<Stage> Upstream(Stage s) {
  // Producer of each artifact; the coarse outputs do not depend on its mode here.
  RunConfig any;
  std::vector<Stage> up;
  for (const auto& input : Inputs(s)) {
    for (const auto producer : StageOrder()) {
      auto outs = Outputs(producer, any);
      if (std::find(outs.begin(), outs.end(), input) == outs.end()) continue;
      if (std::find(up.begin(), up.end(), producer) == up.end()) up.push_back(producer);
    }
  }
  std::sort(up.begin(), up.end());
  return up;
}

json RunManifest::ToJson() const {
  json st = json::object();
  for (const auto& [name, r] : stages) {
    st[name] = {{"input_hash", r.input_hash},
                {"outputs", r.outputs},
                {"wall_time", r.wall_time},
                {"completed_at", r.completed_at}};
  }
  return {{"tool_version", tool_version},
          {"config_hash", config_hash},
          {"config", config},
          {"run_files", {kManifest, kResolved}},
          {"stages", st}};
}

RunManifest RunManifest::FromJson(const json& j) {
  RunManifest m;
  m.tool_version = j.at("tool_version").get<std::string>();
  m.config_hash = j.at("config_hash").get<std::string>();
  m.config = j.at("config");
  for (const auto& [name, r] : j.at("stages").items()) {
    m.stages[name] = {r.at("input_hash").get<std::string>(),
                      r.at("outputs").get<std::vector<std::string>>(),
                      r.at("wall_time").get<double>(), r.at("completed_at").get<std::string>()};
  }
  return m;
}

Pipeline::Pipeline(RunConfig cfg, bool strict) : cfg_(std::move(cfg)) {
  fs::create_directories(cfg_.artifacts_dir);
  lock_path_ = cfg_.artifacts_dir / kLock;
  const int fd = ::open(lock_path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd < 0) {
    const auto held = lock_path_;
    lock_path_.clear();
    throw Error("artifacts directory is in use by another run (remove " + held.string() +
                " if that run is gone)");
  }
  const std::string pid = std::to_string(::getpid()) + "\n";
  [[maybe_unused]] const auto n = ::write(fd, pid.data(), pid.size());
  ::close(fd);

  try {
    const json resolved = ToJson(cfg_);
    const std::string config_hash = Sha256Hex(resolved.dump());
    const auto manifest_path = cfg_.artifacts_dir / kManifest;
    if (fs::exists(manifest_path)) {
      manifest_ = RunManifest::FromJson(ReadJsonFile(manifest_path));
      if (strict && manifest_.config_hash != config_hash) {
        throw ConfigMismatchError("config hash mismatch with the existing manifest in " +
                                  cfg_.artifacts_dir.string());
      }
    }
    manifest_.tool_version = kToolVersion;
    manifest_.config_hash = config_hash;
    manifest_.config = resolved;
    WriteText(cfg_.artifacts_dir / kResolved, resolved.dump(2) + "\n");
    SaveManifest();
  } catch (...) {
    std::error_code ec;
    fs::remove(lock_path_, ec);
    throw;
  }
}

Pipeline::~Pipeline() {
  if (lock_path_.empty()) return;
  std::error_code ec;
  fs::remove(lock_path_, ec);
}

void Pipeline::SaveManifest() const {
  const auto path = cfg_.artifacts_dir / kManifest;
  const auto tmp = cfg_.artifacts_dir / (std::string(kManifest) + ".tmp");
  WriteText(tmp, manifest_.ToJson().dump(2) + "\n");
  fs::rename(tmp, path);
}

std::string Pipeline::InputHash(Stage s) const {
  json inputs = json::object();
  for (const auto& name : Inputs(s)) {
    const auto path = cfg_.artifacts_dir / name;
    if (!fs::exists(path)) {
      // Name the stage that should have produced it.
      for (const auto up : Upstream(s)) {
        const auto outs = Outputs(up, cfg_);
        if (std::find(outs.begin(), outs.end(), name) != outs.end()) {
          throw MissingArtifactError("missing artifact: " + StageName(up));
        }
      }
      throw MissingArtifactError("missing artifact: " + name);
    }
    inputs[name] = Sha256File(path);
  }
  const json key = {{"stage", StageName(s)},
                    {"tool_version", kToolVersion},
                    {"config", StageConfig(s, cfg_)},
                    {"inputs", inputs}};
  return Sha256Hex(key.dump());
}

bool Pipeline::UpToDate(Stage s, const std::string& input_hash) const {
  const auto it = manifest_.stages.find(StageName(s));
  if (it == manifest_.stages.end() || it->second.input_hash != input_hash) return false;
  for (const auto& out : it->second.outputs) {
    if (!fs::exists(cfg_.artifacts_dir / out)) return false;
  }
  return true;
}

StageOutcome Pipeline::RunStage(Stage s) {
  for (const auto up : Upstream(s)) {
    if (!manifest_.stages.count(StageName(up))) {
      throw MissingArtifactError("missing artifact: " + StageName(up));
    }
  }
  const auto hash = InputHash(s);
  if (UpToDate(s, hash)) return {s, false};

  const auto start = std::chrono::steady_clock::now();
  StageFunction(s)(cfg_, cfg_.artifacts_dir);
  const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;

  manifest_.stages[StageName(s)] = {hash, Outputs(s, cfg_), elapsed.count(), UtcNow()};
  SaveManifest();
  return {s, true};
}

std::vector<StageOutcome> Pipeline::RunAll() {
  std::vector<StageOutcome> out;
  for (const auto s : StageOrder()) out.push_back(RunStage(s));
  return out;
}

std::string EmitReport(const RunConfig& cfg) {
  const auto path = cfg.artifacts_dir / "eval.json";
  if (!fs::exists(path)) throw MissingArtifactError("missing artifact: eval");
  return RenderEval(ReadJsonFile(path));
}

}  // namespace cfc
