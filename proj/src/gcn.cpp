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

#include "cfc/gcn.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "cfc/random.hpp"

namespace cfc {
namespace {

constexpr double kLogFloor = 1e-12;
constexpr char kCheckpointMagic[4] = {'C', 'F', 'C', 'W'};

Matrix Sigmoid(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    const double l = logits.data()[i];
    // Branches keep exp() from overflowing.
    out.data()[i] = l >= 0.0 ? 1.0 / (1.0 + std::exp(-l)) : std::exp(l) / (1.0 + std::exp(l));
  }
  return out;
}

Matrix Activate(const Matrix& logits, OutputKind kind) {
  return kind == OutputKind::kSoftmax ? RowSoftmax(logits) : Sigmoid(logits);
}

void CheckShapes(const GcnParams& p, const SparseMatrix& a_hat, const Matrix& x,
                 const SyntheticOODSet* synth) {
  if (a_hat.rows() != a_hat.cols() || a_hat.rows() != x.rows()) {
    throw DimensionError("adjacency is " + std::to_string(a_hat.rows()) + "x" +
                         std::to_string(a_hat.cols()) + " but X has " + std::to_string(x.rows()) +
                         " rows");
  }
  if (x.cols() != p.w0.rows()) {
    throw DimensionError("X has " + std::to_string(x.cols()) + " columns, W0 expects " +
                         std::to_string(p.w0.rows()));
  }
  if (p.w0.cols() != p.w1.rows()) throw DimensionError("W0 and W1 hidden sizes differ");
  if (synth && synth->size() > 0 && synth->embeddings.cols() != p.w1.rows()) {
    throw DimensionError("synthetic embeddings have dimension " +
                         std::to_string(synth->embeddings.cols()) + ", hidden is " +
                         std::to_string(p.w1.rows()));
  }
}

std::size_t UnionSize(const std::vector<NodeId>& mask, const ForwardCache& c) {
  const auto n = mask.size() + static_cast<std::size_t>(c.z_synth.rows());
  if (n == 0) throw ValidationError("empty training union");
  return n;
}

int LabelOf(const std::vector<int>& labels, NodeId id, Eigen::Index out) {
  if (id < 0 || static_cast<std::size_t>(id) >= labels.size()) {
    throw DimensionError("masked node " + std::to_string(id) + " has no label slot");
  }
  const int y = labels[id];
  if (y < 0 || y >= out) {
    throw ValidationError("masked node " + std::to_string(id) + " has label " + std::to_string(y) +
                          " outside [0, " + std::to_string(out) + ")");
  }
  return y;
}

double RowLoss(const Eigen::Ref<const Eigen::RowVectorXd>& z, int y, OutputKind kind) {
  if (kind == OutputKind::kSoftmax) return -std::log(std::max(z(y), kLogFloor));
  double s = 0.0;
  for (Eigen::Index c = 0; c < z.size(); ++c) {
    s -= c == y ? std::log(std::max(z(c), kLogFloor)) : std::log(std::max(1.0 - z(c), kLogFloor));
  }
  return s / static_cast<double>(z.size());
}

// d(loss)/d(logits) for one row, before dividing by the union size.
Eigen::RowVectorXd RowGrad(const Eigen::Ref<const Eigen::RowVectorXd>& z, int y, OutputKind kind) {
  Eigen::RowVectorXd g = z;
  g(y) -= 1.0;
  if (kind == OutputKind::kSigmoid) g /= static_cast<double>(z.size());
  return g;
}

void CheckFinite(const Matrix& m, const char* what) {
  if (!m.allFinite()) throw Error(std::string("non-finite values in ") + what);
}

}  // namespace

void TrainConfig::Validate() const {
  if (!(learning_rate > 0.0)) throw ValidationError("learning_rate must be > 0");
  if (!(weight_decay >= 0.0)) throw ValidationError("weight_decay must be >= 0");
  if (epochs < 1) throw ValidationError("epochs must be >= 1");
  if (hidden_dim < 1) throw ValidationError("hidden_dim must be >= 1");
  if (early_stop_patience < 0) throw ValidationError("early_stop_patience must be >= 0");
}

GcnParams InitParams(Eigen::Index d, Eigen::Index h, Eigen::Index out, std::uint64_t seed) {
  if (d < 1 || h < 1 || out < 1) throw DimensionError("GCN dimensions must be positive");
  Rng rng(seed);
  auto glorot = [&rng](Eigen::Index fan_in, Eigen::Index fan_out) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Matrix w(fan_in, fan_out);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = rng.Uniform(-bound, bound);
    return w;
  };
  GcnParams p;
  p.w0 = glorot(d, h);
  p.w1 = glorot(h, out);
  return p;
}

Matrix RowSoftmax(const Matrix& logits) {
  Matrix z(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double m = logits.row(i).maxCoeff();
    double sum = 0.0;
    for (Eigen::Index c = 0; c < logits.cols(); ++c) {
      z(i, c) = std::exp(logits(i, c) - m);
      sum += z(i, c);
    }
    z.row(i) /= sum;
  }
  return z;
}

ForwardCache Forward(const GcnParams& p, const SparseMatrix& a_hat, const Matrix& x,
                     const SyntheticOODSet* synth, OutputKind kind) {
  CheckShapes(p, a_hat, x, synth);
  ForwardCache c;
  c.ax = Spmm(a_hat, x);
  c.h1_pre = c.ax * p.w0;
  c.h1 = c.h1_pre.cwiseMax(0.0);
  c.ah1 = Spmm(a_hat, c.h1);
  c.z_real = Activate(c.ah1 * p.w1, kind);
  if (synth && synth->size() > 0) {
    c.z_synth = Activate(synth->embeddings * p.w1, kind);
  } else {
    c.z_synth.resize(0, p.w1.cols());
  }
  return c;
}

double Loss(const ForwardCache& cache, const std::vector<int>& labels,
            const std::vector<NodeId>& train_mask, int synth_label, OutputKind kind) {
  const auto n = UnionSize(train_mask, cache);
  const auto out = cache.z_real.cols();
  double total = 0.0;
  for (const auto id : train_mask) total += RowLoss(cache.z_real.row(id), LabelOf(labels, id, out), kind);
  if (cache.z_synth.rows() > 0 && (synth_label < 0 || synth_label >= out)) {
    throw ValidationError("synthetic label outside output range");
  }
  for (Eigen::Index r = 0; r < cache.z_synth.rows(); ++r) {
    total += RowLoss(cache.z_synth.row(r), synth_label, kind);
  }
  return total / static_cast<double>(n);
}

double Objective(const GcnParams& p, const SparseMatrix& a_hat, const Matrix& x,
                 const SyntheticOODSet* synth, const std::vector<int>& labels,
                 const std::vector<NodeId>& train_mask, double weight_decay, OutputKind kind) {
  const auto cache = Forward(p, a_hat, x, synth, kind);
  const int synth_label = synth ? synth->label : -1;
  return Loss(cache, labels, train_mask, synth_label, kind) +
         0.5 * weight_decay * (p.w0.squaredNorm() + p.w1.squaredNorm());
}

namespace {

GcnGrads BackwardFromCache(const GcnParams& p, const SparseMatrix& a_hat, const ForwardCache& c,
                           const SyntheticOODSet* synth, const std::vector<int>& labels,
                           const std::vector<NodeId>& train_mask, double weight_decay,
                           OutputKind kind) {
  const auto n = static_cast<double>(UnionSize(train_mask, c));
  const auto out = c.z_real.cols();

  Matrix g_real = Matrix::Zero(c.z_real.rows(), out);
  for (const auto id : train_mask) {
    g_real.row(id) += RowGrad(c.z_real.row(id), LabelOf(labels, id, out), kind) / n;
  }

  GcnGrads g;
  g.w1 = c.ah1.transpose() * g_real + weight_decay * p.w1;
  if (c.z_synth.rows() > 0) {
    Matrix g_synth(c.z_synth.rows(), out);
    for (Eigen::Index r = 0; r < c.z_synth.rows(); ++r) {
      g_synth.row(r) = RowGrad(c.z_synth.row(r), synth->label, kind) / n;
    }
    g.w1 += synth->embeddings.transpose() * g_synth;
  }

  const Matrix d_ah1 = g_real * p.w1.transpose();
  Matrix d_h1 = SpmmTransposed(a_hat, d_ah1);
  d_h1.array() *= (c.h1_pre.array() > 0.0).cast<double>();
  g.w0 = c.ax.transpose() * d_h1 + weight_decay * p.w0;
  return g;
}

}  // namespace

GcnGrads Backward(const GcnParams& p, const SparseMatrix& a_hat, const Matrix& x,
                  const SyntheticOODSet* synth, const std::vector<int>& labels,
                  const std::vector<NodeId>& train_mask, double weight_decay, OutputKind kind) {
  const auto cache = Forward(p, a_hat, x, synth, kind);
  return BackwardFromCache(p, a_hat, cache, synth, labels, train_mask, weight_decay, kind);
}

int ArgmaxRow(const Eigen::Ref<const Eigen::RowVectorXd>& row) {
  int best = 0;
  for (Eigen::Index c = 1; c < row.size(); ++c) {
    if (row(c) > row(best)) best = static_cast<int>(c);
  }
  return best;
}

double ArgmaxAccuracy(const Matrix& z, const std::vector<NodeId>& ids, const std::vector<int>& truth) {
  if (ids.empty()) return 0.0;
  std::size_t correct = 0;
  for (const auto id : ids) correct += ArgmaxRow(z.row(id)) == truth[id];
  return static_cast<double>(correct) / static_cast<double>(ids.size());
}

TrainResult Train(const SparseMatrix& a_hat, const Matrix& x, const TrainingData& data,
                  const TrainConfig& cfg, OutputKind kind) {
  cfg.Validate();
  if (data.out_dim < 1) throw ValidationError("out_dim must be >= 1");
  if (static_cast<Eigen::Index>(data.labels.size()) != x.rows()) {
    throw DimensionError("labels must have one entry per node");
  }
  if (!data.val_ids.empty() && static_cast<Eigen::Index>(data.val_truth.size()) != x.rows()) {
    throw DimensionError("val_truth must have one entry per node");
  }

  TrainResult result;
  GcnParams p = InitParams(x.cols(), cfg.hidden_dim, data.out_dim, cfg.seed);
  result.params = p;

  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  Matrix m0 = Matrix::Zero(p.w0.rows(), p.w0.cols()), v0 = m0;
  Matrix m1 = Matrix::Zero(p.w1.rows(), p.w1.cols()), v1 = m1;
  auto adam = [&](Matrix& w, Matrix& m, Matrix& v, const Matrix& grad, int t) {
    m = kBeta1 * m + (1.0 - kBeta1) * grad;
    v = kBeta2 * v + (1.0 - kBeta2) * grad.cwiseProduct(grad);
    const double c1 = 1.0 - std::pow(kBeta1, t);
    const double c2 = 1.0 - std::pow(kBeta2, t);
    w.array() -= cfg.learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + kEps);
  };

  const int synth_label = data.synth ? data.synth->label : -1;
  double best_val = -1.0;
  int since_best = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    ForwardCache cache;
    double loss = 0.0;
    try {
      cache = Forward(p, a_hat, x, data.synth, kind);
      CheckFinite(cache.z_real, "predictions");
      loss = Loss(cache, data.labels, data.train_mask, synth_label, kind) +
             0.5 * cfg.weight_decay * (p.w0.squaredNorm() + p.w1.squaredNorm());
    } catch (const DimensionError&) {
      throw;
    } catch (const ValidationError&) {
      throw;
    } catch (const Error& e) {
      throw TrainingDivergedError("epoch " + std::to_string(epoch) + ": " + e.what(), result.history);
    }
    if (!std::isfinite(loss)) {
      throw TrainingDivergedError("epoch " + std::to_string(epoch) + ": non-finite loss",
                                  result.history);
    }
    const double val = data.val_ids.empty() ? 0.0 : ArgmaxAccuracy(cache.z_real, data.val_ids, data.val_truth);
    result.history.push_back({epoch, loss, val});

    if (data.val_ids.empty()) {
      result.params = p;
      result.best_epoch = epoch;
    } else if (val > best_val) {
      best_val = val;
      result.params = p;
      result.best_epoch = epoch;
      since_best = 0;
    } else if (cfg.early_stop_patience > 0 && ++since_best >= cfg.early_stop_patience) {
      break;
    }

    if (epoch + 1 == cfg.epochs) break;
    const auto grads =
        BackwardFromCache(p, a_hat, cache, data.synth, data.labels, data.train_mask, cfg.weight_decay, kind);
    adam(p.w0, m0, v0, grads.w0, epoch + 1);
    adam(p.w1, m1, v1, grads.w1, epoch + 1);
  }
  return result;
}

Matrix Predict(const GcnParams& p, const SparseMatrix& a_hat, const Matrix& x, OutputKind kind) {
  return Forward(p, a_hat, x, nullptr, kind).z_real;
}

void WriteCheckpoint(const std::filesystem::path& path, const GcnParams& p) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  const std::uint32_t dims[3] = {static_cast<std::uint32_t>(p.w0.rows()),
                                 static_cast<std::uint32_t>(p.w0.cols()),
                                 static_cast<std::uint32_t>(p.w1.cols())};
  out.write(kCheckpointMagic, 4);
  out.write(reinterpret_cast<const char*>(dims), sizeof dims);
  out.write(reinterpret_cast<const char*>(p.w0.data()),
            static_cast<std::streamsize>(sizeof(double) * p.w0.size()));
  out.write(reinterpret_cast<const char*>(p.w1.data()),
            static_cast<std::streamsize>(sizeof(double) * p.w1.size()));
}

GcnParams ReadCheckpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path.string());
  char magic[4];
  std::uint32_t dims[3];
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(dims), sizeof dims);
  if (!in || std::memcmp(magic, kCheckpointMagic, 4) != 0) {
    throw ValidationError(path.string() + ": bad checkpoint header");
  }
  GcnParams p;
  p.w0.resize(dims[0], dims[1]);
  p.w1.resize(dims[1], dims[2]);
  in.read(reinterpret_cast<char*>(p.w0.data()), static_cast<std::streamsize>(sizeof(double) * p.w0.size()));
  in.read(reinterpret_cast<char*>(p.w1.data()), static_cast<std::streamsize>(sizeof(double) * p.w1.size()));
  if (!in) throw ValidationError(path.string() + ": truncated checkpoint");
  return p;
}

void WriteHistory(const std::filesystem::path& path, const std::vector<EpochRecord>& history) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& r : history) {
    out << nlohmann::json{{"epoch", r.epoch}, {"loss", r.loss}, {"val_overall", r.val_overall}}.dump()
        << '\n';
  }
}

}  // namespace cfc
