// Copyright 2026 The PowerLearn Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#include "powerlearn/serverside.h"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <map>

#include "absl/strings/numbers.h"
#include "absl/strings/str_cat.h"
#include "absl/strings/str_format.h"
#include "json.hpp"
#include "powerlearn/dataio.h"
#include "powerlearn/rng.h"
#include "powerlearn/trainer.h"

namespace powerlearn {
namespace {

constexpr char kModelMagic[] = "PLSRV1\n";
constexpr double kGainTolerance = 1e-12;

// ---- Quantile binning ----------------------------------------------------

struct BinnedData {
  size_t n = 0;
  size_t d = 0;
  std::vector<std::vector<double>> thresholds;  // per feature, ascending
  std::vector<uint16_t> bins;                   // column-major: f * n + i

  uint16_t bin(size_t f, size_t i) const { return bins[f * n + i]; }
  size_t num_bins(size_t f) const { return thresholds[f].size() + 1; }
};

BinnedData BinFeatures(const Matrix& x, size_t max_bins) {
  BinnedData b;
  b.n = x.rows();
  b.d = x.cols();
  b.thresholds.resize(b.d);
  b.bins.resize(b.n * b.d);
  std::vector<double> col(b.n);
  for (size_t f = 0; f < b.d; ++f) {
    for (size_t i = 0; i < b.n; ++i) col[i] = x(i, f);
    std::vector<double> sorted = col;
    std::sort(sorted.begin(), sorted.end());
    std::vector<double> uniq = sorted;
    uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
    std::vector<double>& t = b.thresholds[f];
    if (uniq.size() <= max_bins) {
      for (size_t k = 0; k + 1 < uniq.size(); ++k) {
        t.push_back(0.5 * (uniq[k] + uniq[k + 1]));
      }
    } else {
      for (size_t k = 1; k < max_bins; ++k) {
        const double v = sorted[k * b.n / max_bins];
        auto next = std::upper_bound(uniq.begin(), uniq.end(), v);
        if (next == uniq.end()) break;
        const double cut = 0.5 * (v + *next);
        if (t.empty() || cut > t.back()) t.push_back(cut);
      }
    }
    for (size_t i = 0; i < b.n; ++i) {
      b.bins[f * b.n + i] = static_cast<uint16_t>(
          std::lower_bound(t.begin(), t.end(), col[i]) - t.begin());
    }
  }
  return b;
}

struct Split {
  bool found = false;
  size_t feature = 0;
  size_t bin = 0;
  double score = 0.0;
};

void Partition(const BinnedData& data, const Split& s,
               std::span<const size_t> rows, std::vector<size_t>& left,
               std::vector<size_t>& right) {
  for (size_t r : rows) {
    (data.bin(s.feature, r) <= s.bin ? left : right).push_back(r);
  }
}

// ---- CART with gini ------------------------------------------------------

class CartBuilder {
 public:
  CartBuilder(const BinnedData& data, std::span<const int64_t> y,
              size_t classes, const ServerConfig& cfg, Rng rng)
      : data_(data), y_(y), k_(classes), cfg_(cfg), rng_(rng) {
    mtry_ = std::max<size_t>(
        1, static_cast<size_t>(std::floor(std::sqrt(double(data.d)))));
  }

  Tree Build(std::vector<size_t> rows) {
    Tree t;
    Grow(t, rows, 0);
    return t;
  }

 private:
  int64_t Grow(Tree& t, std::span<const size_t> rows, size_t depth) {
    const int64_t id = static_cast<int64_t>(t.nodes.size());
    t.nodes.emplace_back();
    Vector counts(k_, 0.0);
    for (size_t r : rows) counts[y_[r]] += 1.0;
    const double n = static_cast<double>(rows.size());
    size_t present = 0;
    double parent = 0.0;
    for (double c : counts) {
      if (c > 0) ++present;
      parent += c * c;
    }
    parent /= n;
    Split best;
    if (depth < cfg_.forest_depth && present > 1 &&
        rows.size() >= 2 * cfg_.min_leaf) {
      best = FindSplit(rows, parent);
    }
    if (!best.found) {
      for (double& c : counts) c /= n;
      t.nodes[id].value = std::move(counts);
      return id;
    }
    std::vector<size_t> left, right;
    Partition(data_, best, rows, left, right);
    t.nodes[id].feature = static_cast<int64_t>(best.feature);
    t.nodes[id].threshold = data_.thresholds[best.feature][best.bin];
    const int64_t l = Grow(t, left, depth + 1);
    const int64_t r = Grow(t, right, depth + 1);
    t.nodes[id].left = l;
    t.nodes[id].right = r;
    return id;
  }

  Split FindSplit(std::span<const size_t> rows, double parent) {
    // Partial Fisher-Yates picks mtry features; scan them in index order.
    std::vector<size_t> features(data_.d);
    for (size_t f = 0; f < data_.d; ++f) features[f] = f;
    for (size_t i = 0; i < mtry_; ++i) {
      const size_t j = i + rng_.Below(data_.d - i);
      std::swap(features[i], features[j]);
    }
    features.resize(mtry_);
    std::sort(features.begin(), features.end());

    Split best;
    best.score = parent + kGainTolerance;
    const double n = static_cast<double>(rows.size());
    std::vector<double> hist;
    for (size_t f : features) {
      const size_t nb = data_.num_bins(f);
      if (nb < 2) continue;
      hist.assign(nb * k_, 0.0);
      for (size_t r : rows) hist[data_.bin(f, r) * k_ + y_[r]] += 1.0;
      Vector left(k_, 0.0), total(k_, 0.0);
      for (size_t b = 0; b < nb; ++b) {
        for (size_t c = 0; c < k_; ++c) total[c] += hist[b * k_ + c];
      }
      double nl = 0.0;
      for (size_t b = 0; b + 1 < nb; ++b) {
        for (size_t c = 0; c < k_; ++c) {
          left[c] += hist[b * k_ + c];
          nl += hist[b * k_ + c];
        }
        const double nr = n - nl;
        if (nl < cfg_.min_leaf || nr < cfg_.min_leaf) continue;
        double sl = 0.0, sr = 0.0;
        for (size_t c = 0; c < k_; ++c) {
          sl += left[c] * left[c];
          const double rc = total[c] - left[c];
          sr += rc * rc;
        }
        const double score = sl / nl + sr / nr;
        if (score > best.score) {
          best = {true, f, b, score};
        }
      }
    }
    return best;
  }

  const BinnedData& data_;
  std::span<const int64_t> y_;
  size_t k_;
  const ServerConfig& cfg_;
  Rng rng_;
  size_t mtry_;
};

// ---- Newton boosting trees -----------------------------------------------

class BoostTreeBuilder {
 public:
  BoostTreeBuilder(const BinnedData& data, const ServerConfig& cfg)
      : data_(data), cfg_(cfg) {}

  Tree Build(std::span<const double> g, std::span<const double> h) {
    g_ = g;
    h_ = h;
    std::vector<size_t> rows(data_.n);
    for (size_t i = 0; i < rows.size(); ++i) rows[i] = i;
    Tree t;
    Grow(t, rows, 0);
    return t;
  }

 private:
  int64_t Grow(Tree& t, std::span<const size_t> rows, size_t depth) {
    const int64_t id = static_cast<int64_t>(t.nodes.size());
    t.nodes.emplace_back();
    double gs = 0.0, hs = 0.0;
    for (size_t r : rows) {
      gs += g_[r];
      hs += h_[r];
    }
    Split best;
    if (depth < cfg_.gbt_depth && rows.size() >= 2) {
      best = FindSplit(rows, gs, hs);
    }
    if (!best.found) {
      t.nodes[id].value = {-cfg_.shrinkage * gs / (hs + cfg_.l2)};
      return id;
    }
    std::vector<size_t> left, right;
    Partition(data_, best, rows, left, right);
    t.nodes[id].feature = static_cast<int64_t>(best.feature);
    t.nodes[id].threshold = data_.thresholds[best.feature][best.bin];
    const int64_t l = Grow(t, left, depth + 1);
    const int64_t r = Grow(t, right, depth + 1);
    t.nodes[id].left = l;
    t.nodes[id].right = r;
    return id;
  }

  Split FindSplit(std::span<const size_t> rows, double gs, double hs) {
    const double lambda = cfg_.l2;
    const double parent = gs * gs / (hs + lambda);
    Split best;
    best.score = parent + kGainTolerance;
    std::vector<double> hg, hh;
    std::vector<size_t> hc;
    for (size_t f = 0; f < data_.d; ++f) {
      const size_t nb = data_.num_bins(f);
      if (nb < 2) continue;
      hg.assign(nb, 0.0);
      hh.assign(nb, 0.0);
      hc.assign(nb, 0);
      for (size_t r : rows) {
        const uint16_t b = data_.bin(f, r);
        hg[b] += g_[r];
        hh[b] += h_[r];
        ++hc[b];
      }
      double gl = 0.0, hl = 0.0;
      size_t cl = 0;
      for (size_t b = 0; b + 1 < nb; ++b) {
        gl += hg[b];
        hl += hh[b];
        cl += hc[b];
        if (cl == 0 || cl == rows.size()) continue;
        const double gr = gs - gl, hr = hs - hl;
        const double score = gl * gl / (hl + lambda) + gr * gr / (hr + lambda);
        if (score > best.score) best = {true, f, b, score};
      }
    }
    return best;
  }

  const BinnedData& data_;
  const ServerConfig& cfg_;
  std::span<const double> g_, h_;
};

double Sigmoid(double a) {
  return a >= 0 ? 1.0 / (1.0 + std::exp(-a)) : std::exp(a) / (1.0 + std::exp(a));
}

void SoftmaxInPlace(Vector& v) {
  const double mx = *std::max_element(v.begin(), v.end());
  double s = 0.0;
  for (double& e : v) {
    e = std::exp(e - mx);
    s += e;
  }
  for (double& e : v) e /= s;
}

// Raw-score columns: 1 for binary logistic boosting, K otherwise.
size_t ScoreColumns(size_t classes) { return classes == 2 ? 1 : classes; }

absl::StatusOr<ServerModel> FitGbt(const Matrix& x, std::span<const int64_t> y,
                                   size_t classes, const ServerConfig& cfg) {
  ServerModel m;
  m.kind = ServerKind::kGbt;
  m.dim = x.cols();
  m.classes = classes;
  const size_t n = x.rows();
  const size_t cols = ScoreColumns(classes);
  Vector prior(classes, 0.0);
  for (int64_t v : y) prior[v] += 1.0;
  for (double& p : prior) p = std::max(p / double(n), 1e-6);
  if (cols == 1) {
    m.base_score = {std::log(prior[1] / prior[0])};
  } else {
    m.base_score.resize(classes);
    for (size_t c = 0; c < classes; ++c) m.base_score[c] = std::log(prior[c]);
  }
  BinnedData data = BinFeatures(x, cfg.max_bins);
  BoostTreeBuilder builder(data, cfg);
  std::vector<Vector> raw(n, m.base_score);
  Vector g(n), h(n);
  std::vector<Vector> probs(n);
  for (size_t round = 0; round < cfg.rounds; ++round) {
    for (size_t i = 0; i < n; ++i) {
      if (cols == 1) {
        probs[i] = {Sigmoid(raw[i][0])};
      } else {
        probs[i] = raw[i];
        SoftmaxInPlace(probs[i]);
      }
    }
    for (size_t c = 0; c < cols; ++c) {
      for (size_t i = 0; i < n; ++i) {
        const double p = probs[i][c];
        const double target = cols == 1 ? double(y[i] == 1)
                                        : double(y[i] == int64_t(c));
        g[i] = p - target;
        h[i] = std::max(p * (1.0 - p), 1e-16);
      }
      Tree t = builder.Build(g, h);
      for (size_t i = 0; i < n; ++i) raw[i][c] += t.Leaf(x.row(i))[0];
      m.trees.push_back(std::move(t));
    }
  }
  return m;
}

absl::StatusOr<ServerModel> FitForest(const Matrix& x,
                                      std::span<const int64_t> y,
                                      size_t classes, const ServerConfig& cfg,
                                      uint64_t seed) {
  ServerModel m;
  m.kind = ServerKind::kForest;
  m.dim = x.cols();
  m.classes = classes;
  BinnedData data = BinFeatures(x, cfg.max_bins);
  m.trees.resize(cfg.trees);
  const Rng master(seed);
  ParallelFor(cfg.trees, [&](size_t t) {
    Rng rng = master.Fork(t);
    std::vector<size_t> rows(x.rows());
    for (size_t& r : rows) r = rng.Below(x.rows());
    std::sort(rows.begin(), rows.end());
    CartBuilder builder(data, y, classes, cfg, rng.Fork(1));
    m.trees[t] = builder.Build(std::move(rows));
  });
  return m;
}

absl::StatusOr<ServerModel> FitMlp(const Matrix& x, std::span<const int64_t> y,
                                   size_t classes, const ServerConfig& cfg,
                                   uint64_t seed) {
  ServerModel m;
  m.kind = ServerKind::kMlp;
  m.dim = x.cols();
  m.classes = classes;
  std::vector<size_t> sizes = {x.cols()};
  sizes.insert(sizes.end(), cfg.mlp_hidden.begin(), cfg.mlp_hidden.end());
  sizes.push_back(classes);
  Rng rng(seed);
  Rng init = rng.Fork(0);
  m.mlp = MakeMlp(sizes, Activation::kRelu, Activation::kSoftmax, init);
  const size_t count = m.mlp.ParameterCount();
  Optimizer opt(OptimizerKind::kAdam, cfg.learning_rate, count);
  Vector theta = m.mlp.Flatten();
  const size_t n = x.rows();
  const size_t batch = std::min(cfg.batch_size, n);
  std::vector<size_t> order(n);
  for (size_t i = 0; i < n; ++i) order[i] = i;
  Rng shuffle = rng.Fork(2);
  size_t cursor = n;
  constexpr size_t kChunks = 4;
  std::vector<Vector> chunk_grad(kChunks, Vector(count));
  std::vector<size_t> rows(batch);
  for (size_t step = 0; step < cfg.steps; ++step) {
    for (size_t b = 0; b < batch; ++b) {
      if (cursor == n) {
        shuffle.Shuffle(std::span<size_t>(order));
        cursor = 0;
      }
      rows[b] = order[cursor++];
    }
    ParallelFor(kChunks, [&](size_t c) {
      Vector& grad = chunk_grad[c];
      std::fill(grad.begin(), grad.end(), 0.0);
      Vector gl(classes);
      for (size_t b = c; b < batch; b += kChunks) {
        const size_t r = rows[b];
        MlpTrace tr = MlpForwardTrace(m.mlp, x.row(r));
        SoftmaxCrossEntropy(tr.output, static_cast<int>(y[r]), gl);
        MlpBackward(m.mlp, tr, gl, grad, 1.0 / double(batch));
      }
    });
    Vector grad(count, 0.0);
    for (const Vector& cg : chunk_grad) {
      for (size_t i = 0; i < count; ++i) grad[i] += cg[i];
    }
    for (double g : grad) {
      if (!std::isfinite(g)) {
        return absl::AbortedError(
            absl::StrFormat("server MLP diverged at step %d", step + 1));
      }
    }
    opt.Step(theta, grad);
    if (absl::Status s = m.mlp.Unflatten(theta); !s.ok()) return s;
  }
  return m;
}

void PutI64(Bytes& out, int64_t v) { AppendU64(out, static_cast<uint64_t>(v)); }

}  // namespace

std::string ServerKindName(ServerKind k) {
  switch (k) {
    case ServerKind::kMlp:
      return "mlp";
    case ServerKind::kForest:
      return "forest";
    case ServerKind::kGbt:
      return "gbt";
  }
  return "mlp";
}

absl::StatusOr<ServerKind> ParseServerKind(const std::string& name) {
  for (ServerKind k : {ServerKind::kMlp, ServerKind::kForest, ServerKind::kGbt}) {
    if (ServerKindName(k) == name) return k;
  }
  return absl::InvalidArgumentError(
      absl::StrCat("unknown server model '", name, "' (mlp, forest, gbt)"));
}

absl::Status ServerConfig::Validate() const {
  if (!(learning_rate > 0.0) || batch_size == 0) {
    return absl::InvalidArgumentError("server MLP needs lr > 0 and batch > 0");
  }
  if (trees == 0 || rounds == 0) {
    return absl::InvalidArgumentError("tree counts must be positive");
  }
  if (max_bins < 2 || max_bins > 65536) {
    return absl::InvalidArgumentError("max_bins must lie in [2, 65536]");
  }
  if (!(shrinkage > 0.0) || !(l2 >= 0.0) || min_leaf == 0) {
    return absl::InvalidArgumentError("bad boosting/forest parameters");
  }
  for (size_t h : mlp_hidden) {
    if (h == 0) return absl::InvalidArgumentError("hidden width must be > 0");
  }
  return absl::OkStatus();
}

const Vector& Tree::Leaf(std::span<const double> x) const {
  size_t i = 0;
  while (nodes[i].feature >= 0) {
    i = static_cast<size_t>(x[nodes[i].feature] <= nodes[i].threshold
                                ? nodes[i].left
                                : nodes[i].right);
  }
  return nodes[i].value;
}

size_t Tree::Depth() const {
  if (nodes.empty()) return 0;
  std::vector<std::pair<size_t, size_t>> stack = {{0, 0}};
  size_t depth = 0;
  while (!stack.empty()) {
    auto [i, d] = stack.back();
    stack.pop_back();
    depth = std::max(depth, d);
    if (nodes[i].feature >= 0) {
      stack.push_back({static_cast<size_t>(nodes[i].left), d + 1});
      stack.push_back({static_cast<size_t>(nodes[i].right), d + 1});
    }
  }
  return depth;
}

absl::Status Tree::Validate(size_t value_size) const {
  if (nodes.empty()) return absl::InvalidArgumentError("empty tree");
  std::vector<uint8_t> seen(nodes.size(), 0);
  std::vector<size_t> stack = {0};
  seen[0] = 1;
  size_t visited = 0;
  while (!stack.empty()) {
    const size_t i = stack.back();
    stack.pop_back();
    ++visited;
    const TreeNode& nd = nodes[i];
    if (nd.feature < 0) {
      if (nd.value.size() != value_size) {
        return absl::InvalidArgumentError("leaf value has wrong size");
      }
      continue;
    }
    for (int64_t c : {nd.left, nd.right}) {
      if (c <= 0 || static_cast<size_t>(c) >= nodes.size() || seen[c]) {
        return absl::InvalidArgumentError("malformed tree links");
      }
      seen[c] = 1;
      stack.push_back(static_cast<size_t>(c));
    }
  }
  if (visited != nodes.size()) {
    return absl::InvalidArgumentError("unreachable tree nodes");
  }
  return absl::OkStatus();
}

absl::StatusOr<Vector> ServerModel::Scores(std::span<const double> x) const {
  if (x.size() != dim) {
    return absl::InvalidArgumentError(
        absl::StrFormat("input has %d features, model expects %d", x.size(), dim));
  }
  Vector out(classes, 0.0);
  if (constant) {
    out[constant_class] = 1.0;
    return out;
  }
  switch (kind) {
    case ServerKind::kMlp:
      return MlpForward(mlp, x);
    case ServerKind::kForest: {
      for (const Tree& t : trees) out[ArgMax(t.Leaf(x))] += 1.0;
      for (double& v : out) v /= static_cast<double>(trees.size());
      return out;
    }
    case ServerKind::kGbt: {
      Vector raw = base_score;
      const size_t cols = raw.size();
      for (size_t i = 0; i < trees.size(); ++i) {
        raw[i % cols] += trees[i].Leaf(x)[0];
      }
      if (cols == 1) {
        const double p = Sigmoid(raw[0]);
        return Vector{1.0 - p, p};
      }
      SoftmaxInPlace(raw);
      return raw;
    }
  }
  return out;
}

absl::StatusOr<int> ServerModel::Predict(std::span<const double> x) const {
  absl::StatusOr<Vector> s = Scores(x);
  if (!s.ok()) return s.status();
  return static_cast<int>(ArgMax(*s));
}

std::string EvalReport::ToJson() const {
  nlohmann::ordered_json j;
  j["accuracy"] = accuracy;
  j["class_counts"] = class_counts;
  j["correct_counts"] = correct_counts;
  j["n_train"] = n_train;
  j["n_test"] = n_test;
  return j.dump(2);
}

absl::StatusOr<EvalReport> Evaluate(const ServerModel& m, const Matrix& x,
                                    std::span<const int64_t> y) {
  if (x.rows() != y.size()) {
    return absl::InvalidArgumentError("feature and label counts differ");
  }
  if (x.rows() > 0 && x.cols() != m.dim) {
    return absl::InvalidArgumentError(absl::StrFormat(
        "inputs have %d features, model expects %d", x.cols(), m.dim));
  }
  EvalReport rep;
  rep.n_test = x.rows();
  rep.class_counts.assign(m.classes, 0);
  rep.correct_counts.assign(m.classes, 0);
  std::vector<int> pred(x.rows());
  std::vector<absl::Status> errors(x.rows());
  ParallelFor(x.rows(), [&](size_t i) {
    absl::StatusOr<int> p = m.Predict(x.row(i));
    if (p.ok()) {
      pred[i] = *p;
    } else {
      errors[i] = p.status();
    }
  });
  for (const absl::Status& e : errors) {
    if (!e.ok()) return e;
  }
  size_t correct = 0;
  for (size_t i = 0; i < x.rows(); ++i) {
    const int64_t label = y[i];
    const bool hit = pred[i] == label;
    if (label >= 0 && static_cast<size_t>(label) < m.classes) {
      ++rep.class_counts[label];
      if (hit) ++rep.correct_counts[label];
    }
    if (hit) ++correct;
  }
  rep.accuracy = x.rows() ? double(correct) / double(x.rows()) : 0.0;
  return rep;
}

absl::StatusOr<ServerModel> FitServerModel(const Matrix& x,
                                           std::span<const int64_t> y,
                                           size_t classes, ServerKind kind,
                                           const ServerConfig& cfg,
                                           uint64_t seed) {
  if (absl::Status s = cfg.Validate(); !s.ok()) return s;
  if (x.rows() == 0) return absl::InvalidArgumentError("no training rows");
  if (x.rows() != y.size()) {
    return absl::InvalidArgumentError("feature and label counts differ");
  }
  if (!x.AllFinite()) return absl::InvalidArgumentError("non-finite features");
  if (classes == 0) return absl::InvalidArgumentError("no classes");
  std::vector<size_t> seen(classes, 0);
  for (int64_t v : y) {
    if (v < 0 || static_cast<size_t>(v) >= classes) {
      return absl::InvalidArgumentError(
          absl::StrFormat("label %d outside [0, %d)", v, classes));
    }
    ++seen[v];
  }
  size_t present = 0;
  for (size_t c : seen) present += c > 0;
  if (present == 1) {
    ServerModel m;
    m.kind = kind;
    m.dim = x.cols();
    m.classes = classes;
    m.constant = true;
    m.constant_class = static_cast<int>(y[0]);
    return m;
  }
  switch (kind) {
    case ServerKind::kMlp:
      return FitMlp(x, y, classes, cfg, seed);
    case ServerKind::kForest:
      return FitForest(x, y, classes, cfg, seed);
    case ServerKind::kGbt:
      return FitGbt(x, y, classes, cfg);
  }
  return absl::InvalidArgumentError("unknown server kind");
}

absl::StatusOr<ServerRun> TrainServer(const ReleaseBundle& bundle,
                                      ServerKind kind, const ServerConfig& cfg,
                                      uint64_t seed) {
  if (bundle.size() == 0) return absl::InvalidArgumentError("empty bundle");
  if (absl::Status s = bundle.Validate(); !s.ok()) return s;
  int64_t max_label = 0;
  for (int64_t v : bundle.labels) {
    if (v < 0) return absl::InvalidArgumentError("negative label in bundle");
    max_label = std::max(max_label, v);
  }
  const size_t classes = std::max<size_t>(2, static_cast<size_t>(max_label) + 1);
  ServerRun run;
  const size_t n = bundle.size();
  if (n >= 5) {
    absl::StatusOr<std::vector<size_t>> perm = SplitPermutation(n, seed);
    if (!perm.ok()) return perm.status();
    const size_t n_train = static_cast<size_t>(std::lround(0.8 * double(n)));
    run.train_rows.assign(perm->begin(), perm->begin() + n_train);
    run.test_rows.assign(perm->begin() + n_train, perm->end());
    std::sort(run.train_rows.begin(), run.train_rows.end());
    std::sort(run.test_rows.begin(), run.test_rows.end());
  } else {
    for (size_t i = 0; i < n; ++i) run.train_rows.push_back(i);
    run.test_rows = run.train_rows;
  }
  auto gather = [&](const std::vector<size_t>& rows) {
    std::vector<int64_t> y;
    for (size_t r : rows) y.push_back(bundle.labels[r]);
    return std::make_pair(SelectRows(bundle.embeddings, rows), y);
  };
  auto [xt, yt] = gather(run.train_rows);
  auto [xv, yv] = gather(run.test_rows);
  absl::StatusOr<ServerModel> m =
      FitServerModel(xt, yt, classes, kind, cfg, seed);
  if (!m.ok()) return m.status();
  run.model = *std::move(m);
  run.single_class = run.model.constant;
  absl::StatusOr<EvalReport> tr = Evaluate(run.model, xt, yt);
  if (!tr.ok()) return tr.status();
  absl::StatusOr<EvalReport> te = Evaluate(run.model, xv, yv);
  if (!te.ok()) return te.status();
  run.train = *tr;
  run.test = *te;
  run.train.n_train = run.test.n_train = xt.rows();
  return run;
}

Bytes SerializeServerModel(const ServerModel& m) {
  Bytes out;
  AppendString(out, kModelMagic);
  AppendString(out, absl::StrCat("kind=", ServerKindName(m.kind), "\n"));
  AppendString(out, absl::StrCat("dim=", m.dim, "\n"));
  AppendString(out, absl::StrCat("classes=", m.classes, "\n"));
  AppendString(out, absl::StrCat("constant=", m.constant ? m.constant_class : -1,
                                 "\n"));
  if (m.kind == ServerKind::kMlp && !m.constant) {
    AppendString(out, absl::StrCat("layers=", LayersToString(m.mlp), "\n"));
  } else {
    AppendString(out, absl::StrCat("trees=", m.trees.size(), "\n"));
    AppendString(out, absl::StrCat("base=", m.base_score.size(), "\n"));
  }
  AppendString(out, "\n");
  if (m.kind == ServerKind::kMlp && !m.constant) {
    for (double v : m.mlp.Flatten()) AppendF64(out, v);
  } else {
    for (double v : m.base_score) AppendF64(out, v);
    for (const Tree& t : m.trees) {
      AppendU64(out, t.nodes.size());
      for (const TreeNode& nd : t.nodes) {
        PutI64(out, nd.feature);
        AppendF64(out, nd.threshold);
        PutI64(out, nd.left);
        PutI64(out, nd.right);
        AppendU64(out, nd.value.size());
        for (double v : nd.value) AppendF64(out, v);
      }
    }
  }
  AppendU32(out, Crc32(out));
  return out;
}

absl::StatusOr<ServerModel> DeserializeServerModel(
    std::span<const uint8_t> bytes) {
  const size_t magic = sizeof(kModelMagic) - 1;
  if (bytes.size() < magic + 4 ||
      std::memcmp(bytes.data(), kModelMagic, magic) != 0) {
    return absl::InvalidArgumentError("not a server model dump");
  }
  const size_t body = bytes.size() - 4;
  if (Crc32(bytes.subspan(0, body)) != LoadU32(bytes.data() + body)) {
    return absl::DataLossError("server model checksum mismatch");
  }
  size_t pos = magic;
  absl::StatusOr<std::map<std::string, std::string>> kv =
      ParseHeaderLines(bytes.subspan(0, body), pos);
  if (!kv.ok()) return kv.status();
  auto get = [&](const std::string& k) -> absl::StatusOr<std::string> {
    auto it = kv->find(k);
    if (it == kv->end()) {
      return absl::InvalidArgumentError(absl::StrCat("missing key ", k));
    }
    return it->second;
  };
  ServerModel m;
  absl::StatusOr<std::string> kind = get("kind");
  if (!kind.ok()) return kind.status();
  absl::StatusOr<ServerKind> k = ParseServerKind(*kind);
  if (!k.ok()) return k.status();
  m.kind = *k;
  int64_t constant = -1;
  absl::StatusOr<std::string> s_dim = get("dim"), s_cls = get("classes"),
                              s_const = get("constant");
  if (!s_dim.ok() || !s_cls.ok() || !s_const.ok() ||
      !absl::SimpleAtoi(*s_dim, &m.dim) ||
      !absl::SimpleAtoi(*s_cls, &m.classes) ||
      !absl::SimpleAtoi(*s_const, &constant)) {
    return absl::InvalidArgumentError("bad model header");
  }
  m.constant = constant >= 0;
  m.constant_class = static_cast<int>(std::max<int64_t>(constant, 0));
  size_t p = pos;
  auto need = [&](size_t count) { return p + count <= body; };
  auto f64 = [&]() {
    const double v = LoadF64(bytes.data() + p);
    p += 8;
    return v;
  };
  auto u64 = [&]() {
    const uint64_t v = LoadU64(bytes.data() + p);
    p += 8;
    return v;
  };
  const absl::Status truncated = absl::DataLossError("truncated model dump");
  if (m.kind == ServerKind::kMlp && !m.constant) {
    absl::StatusOr<std::string> layers = get("layers");
    if (!layers.ok()) return layers.status();
    absl::StatusOr<MlpParams> net = LayersFromString(*layers);
    if (!net.ok()) return net.status();
    m.mlp = *std::move(net);
    Vector flat(m.mlp.ParameterCount());
    if (!need(8 * flat.size())) return truncated;
    for (double& v : flat) v = f64();
    if (absl::Status s = m.mlp.Unflatten(flat); !s.ok()) return s;
    if (absl::Status s = m.mlp.Validate(); !s.ok()) return s;
  } else {
    size_t trees = 0, base = 0;
    absl::StatusOr<std::string> s_trees = get("trees"), s_base = get("base");
    if (!s_trees.ok() || !s_base.ok() || !absl::SimpleAtoi(*s_trees, &trees) ||
        !absl::SimpleAtoi(*s_base, &base)) {
      return absl::InvalidArgumentError("bad tree header");
    }
    if (!need(8 * base)) return truncated;
    m.base_score.resize(base);
    for (double& v : m.base_score) v = f64();
    const size_t value_size =
        m.kind == ServerKind::kForest ? m.classes : size_t{1};
    for (size_t t = 0; t < trees; ++t) {
      if (!need(8)) return truncated;
      const uint64_t count = u64();
      if (count > (body - p) / 40) return truncated;
      Tree tree;
      tree.nodes.resize(count);
      for (TreeNode& nd : tree.nodes) {
        if (!need(40)) return truncated;
        nd.feature = static_cast<int64_t>(u64());
        nd.threshold = f64();
        nd.left = static_cast<int64_t>(u64());
        nd.right = static_cast<int64_t>(u64());
        const uint64_t vs = u64();
        if (vs > (body - p) / 8) return truncated;
        nd.value.resize(vs);
        for (double& v : nd.value) v = f64();
        if (nd.feature >= static_cast<int64_t>(m.dim)) {
          return absl::InvalidArgumentError("split feature out of range");
        }
      }
      if (absl::Status s = tree.Validate(value_size); !s.ok()) return s;
      m.trees.push_back(std::move(tree));
    }
  }
  if (p != body) return absl::InvalidArgumentError("trailing bytes in dump");
  return m;
}

}  // namespace powerlearn
