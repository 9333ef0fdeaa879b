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

#include "powerlearn/trainer.h"

#include <algorithm>
#include <cmath>
#include <optional>

#include "absl/status/status.h"
#include "absl/strings/str_cat.h"
#include "absl/strings/str_format.h"

namespace powerlearn {
namespace {

// Batch gradients are reduced over this many fixed chunks so the summation
// order does not depend on the worker count.
constexpr size_t kReductionChunks = 4;

struct ChunkAccumulator {
  double lp = 0.0;
  double lu = 0.0;
  size_t used = 0;
  size_t skipped = 0;
  Vector priv;
  Vector util;
  absl::Status error;
};

}  // namespace

std::string OptimizerName(OptimizerKind k) {
  return k == OptimizerKind::kSgd ? "sgd" : "adam";
}

absl::StatusOr<OptimizerKind> ParseOptimizer(const std::string& name) {
  if (name == "sgd") return OptimizerKind::kSgd;
  if (name == "adam") return OptimizerKind::kAdam;
  return absl::InvalidArgumentError("unknown optimizer '" + name + "'");
}

absl::Status TrainConfig::Validate(size_t n_train) const {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
    return absl::InvalidArgumentError("lambda must be finite and >= 0");
  }
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    return absl::InvalidArgumentError("learning rate must be > 0");
  }
  if (batch_size == 0 || batch_size > n_train) {
    return absl::InvalidArgumentError(absl::StrFormat(
        "batch size must lie in [1, %d], got %d", n_train, batch_size));
  }
  if (power < 1) return absl::InvalidArgumentError("power must be >= 1");
  if (!(alpha > 0.0 && alpha < 1.0)) {
    return absl::InvalidArgumentError("alpha must lie in (0, 1)");
  }
  if (!(output_scale >= 0.0) || !std::isfinite(output_scale)) {
    return absl::InvalidArgumentError("output scale must be finite and >= 0");
  }
  return absl::OkStatus();
}

std::string TrainHistory::ToCsv() const {
  std::string out = "step,lp,lu,joint,gradnorm\n";
  for (const TrainRecord& r : records) {
    absl::StrAppend(&out, r.step, ",", FormatDouble(r.lp), ",",
                    FormatDouble(r.lu), ",", FormatDouble(r.joint), ",",
                    FormatDouble(r.grad_norm), "\n");
  }
  return out;
}

Optimizer::Optimizer(OptimizerKind kind, double lr, size_t size)
    : kind_(kind), lr_(lr) {
  if (kind_ == OptimizerKind::kAdam) {
    m_.assign(size, 0.0);
    v_.assign(size, 0.0);
  }
}

void Optimizer::Step(std::span<double> params, std::span<const double> grad) {
  if (kind_ == OptimizerKind::kSgd) {
    for (size_t i = 0; i < params.size(); ++i) params[i] -= lr_ * grad[i];
    return;
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (size_t i = 0; i < params.size(); ++i) {
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grad[i];
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grad[i] * grad[i];
    const double mh = m_[i] / c1;
    const double vh = v_[i] / c2;
    params[i] -= lr_ * mh / (std::sqrt(vh) + eps_);
  }
}

absl::StatusOr<JointEval> JointLossAndGradient(
    const PrivatizerParams& priv, const MlpParams& util, const Matrix& x,
    std::span<const int> y, const std::vector<Vector>& scores,
    std::span<const size_t> rows, double lambda) {
  if (rows.empty()) return absl::InvalidArgumentError("empty batch");
  const size_t chunks = std::min(kReductionChunks, rows.size());
  const size_t np = priv.ParameterCount(), nu = util.ParameterCount();
  std::vector<ChunkAccumulator> acc(chunks);
  ParallelFor(chunks, [&](size_t c) {
    ChunkAccumulator& a = acc[c];
    a.priv.assign(np, 0.0);
    a.util.assign(nu, 0.0);
    const size_t begin = rows.size() * c / chunks;
    const size_t end = rows.size() * (c + 1) / chunks;
    Vector grad_logits;
    for (size_t b = begin; b < end; ++b) {
      const size_t r = rows[b];
      absl::StatusOr<PrivatizerTape> tape = PrivatizerTape::Record(priv, x.row(r));
      if (!tape.ok()) {
        if (IsUnprivatizable(tape.status())) {
          ++a.skipped;
          continue;
        }
        a.error = tape.status();
        return;
      }
      const Vector& score = scores[r];
      a.lp += tape->PrivacyLoss(score);
      Vector z_adj;
      if (lambda != 0.0) {
        MlpTrace ut = MlpForwardTrace(util, tape->sample().z);
        grad_logits.assign(ut.output.size(), 0.0);
        a.lu += SoftmaxCrossEntropy(ut.output, y[r], grad_logits);
        z_adj = MlpBackward(util, ut, grad_logits, a.util, lambda);
        for (double& g : z_adj) g *= lambda;
      } else {
        MlpTrace ut = MlpForwardTrace(util, tape->sample().z);
        grad_logits.assign(ut.output.size(), 0.0);
        a.lu += SoftmaxCrossEntropy(ut.output, y[r], grad_logits);
      }
      tape->Backward(score, 1.0, z_adj, a.priv);
      ++a.used;
    }
  });
  JointEval out;
  out.priv_grad.assign(np, 0.0);
  out.util_grad.assign(nu, 0.0);
  size_t used = 0;
  for (const ChunkAccumulator& a : acc) {
    if (!a.error.ok()) return a.error;
    out.lp += a.lp;
    out.lu += a.lu;
    used += a.used;
    out.skipped += a.skipped;
    for (size_t i = 0; i < np; ++i) out.priv_grad[i] += a.priv[i];
    for (size_t i = 0; i < nu; ++i) out.util_grad[i] += a.util[i];
  }
  if (used == 0) {
    return absl::FailedPreconditionError(
        "no privatizable sample in the batch");
  }
  const double inv = 1.0 / static_cast<double>(used);
  out.lp *= inv;
  out.lu *= inv;
  out.joint = out.lp + lambda * out.lu;
  for (double& g : out.priv_grad) g *= inv;
  for (double& g : out.util_grad) g *= inv;
  return out;
}

absl::StatusOr<TrainRecord> JointStep(PrivatizerParams& priv, MlpParams& util,
                                      OptimizerState& opt, const Matrix& x,
                                      std::span<const int> y,
                                      const std::vector<Vector>& scores,
                                      std::span<const size_t> rows,
                                      const TrainConfig& cfg) {
  absl::StatusOr<JointEval> ev =
      JointLossAndGradient(priv, util, x, y, scores, rows, cfg.lambda);
  if (!ev.ok()) return ev.status();
  double gsq = 0.0;
  for (double g : ev->priv_grad) gsq += g * g;
  for (double g : ev->util_grad) gsq += g * g;
  if (!std::isfinite(ev->joint) || !std::isfinite(gsq)) {
    return absl::AbortedError(absl::StrFormat(
        "training diverged: joint loss %g (L_P %g, L_U %g), |grad|^2 %g",
        ev->joint, ev->lp, ev->lu, gsq));
  }
  Vector theta = priv.Flatten();
  opt.priv.Step(theta, ev->priv_grad);
  if (absl::Status s = priv.Unflatten(theta); !s.ok()) return s;
  Vector phi = util.Flatten();
  opt.util.Step(phi, ev->util_grad);
  if (absl::Status s = util.Unflatten(phi); !s.ok()) return s;
  if (cfg.project_weights) ProjectWeightNorms(priv);
  TrainRecord rec;
  rec.lp = ev->lp;
  rec.lu = ev->lu;
  rec.joint = ev->joint;
  rec.grad_norm = std::sqrt(gsq);
  rec.skipped = ev->skipped;
  return rec;
}

ClientModel InitClientModel(size_t d, size_t classes, const TrainConfig& cfg) {
  Rng root(cfg.seed);
  Rng priv_rng = root.Fork(0);
  Rng util_rng = root.Fork(1);
  ClientModel m;
  if (cfg.variant == PrivatizerVariant::kLinearPower) {
    std::vector<size_t> hidden = cfg.privatizer_hidden;
    if (hidden.empty()) hidden = {2 * d};
    m.privatizer =
        MakeLinearPower(d, hidden, cfg.power, priv_rng, cfg.output_scale);
  } else {
    m.privatizer = MakeTwoLayerTanh(
        d, cfg.tanh_width == 0 ? 2 * d : cfg.tanh_width, priv_rng);
    if (cfg.project_weights) ProjectWeightNorms(m.privatizer);
  }
  std::vector<size_t> sizes = {d};
  sizes.insert(sizes.end(), cfg.utility_hidden.begin(), cfg.utility_hidden.end());
  sizes.push_back(std::max<size_t>(classes, 2));
  m.utility = MakeMlp(sizes, Activation::kTanh, Activation::kSoftmax, util_rng);
  return m;
}

absl::StatusOr<std::vector<Vector>> ScoreRows(const DensityModel& density,
                                              const Matrix& x) {
  std::vector<Vector> out(x.rows());
  std::vector<absl::Status> errors(x.rows());
  ParallelFor(x.rows(), [&](size_t i) {
    absl::StatusOr<Vector> s = density.Score(x.row(i));
    if (s.ok()) {
      out[i] = *std::move(s);
    } else {
      errors[i] = s.status();
    }
  });
  for (const absl::Status& e : errors) {
    if (!e.ok()) return e;
  }
  return out;
}

absl::StatusOr<ClientModel> TrainClient(const TabularDataset& ds,
                                        const TrainConfig& cfg,
                                        const DensityModel* density) {
  if (ds.train.empty()) return absl::InvalidArgumentError("no training rows");
  if (absl::Status s = cfg.Validate(ds.train.size()); !s.ok()) return s;
  const Matrix x = SelectRows(ds.x, ds.train);
  std::vector<int> y(ds.train.size());
  for (size_t i = 0; i < y.size(); ++i) y[i] = ds.y[ds.train[i]];

  std::optional<DensityModel> own;
  if (density == nullptr) {
    absl::StatusOr<DensityModel> dm =
        DensityModel::Create(x, cfg.bandwidth, cfg.alpha);
    if (!dm.ok()) return dm.status();
    own = *std::move(dm);
    density = &*own;
  }
  // Scores are computed the first time a row enters a batch.
  std::vector<Vector> scores(x.rows());
  std::vector<size_t> missing;

  ClientModel model = InitClientModel(ds.schema.dim, ds.num_classes(), cfg);
  if (absl::Status s = model.privatizer.Validate(); !s.ok()) return s;
  OptimizerState opt{
      Optimizer(cfg.optimizer, cfg.learning_rate,
                model.privatizer.ParameterCount()),
      Optimizer(cfg.optimizer, cfg.learning_rate,
                model.utility.ParameterCount())};
  Rng batch_rng = Rng(cfg.seed).Fork(2);
  std::vector<size_t> order(x.rows());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  size_t cursor = order.size();
  for (size_t step = 1; step <= cfg.steps; ++step) {
    if (cursor + cfg.batch_size > order.size()) {
      batch_rng.Shuffle(std::span<size_t>(order));
      cursor = 0;
    }
    std::span<const size_t> rows(order.data() + cursor, cfg.batch_size);
    cursor += cfg.batch_size;
    missing.clear();
    for (size_t r : rows) {
      if (scores[r].empty()) missing.push_back(r);
    }
    if (!missing.empty()) {
      absl::StatusOr<std::vector<Vector>> fresh =
          ScoreRows(*density, SelectRows(x, missing));
      if (!fresh.ok()) return fresh.status();
      for (size_t i = 0; i < missing.size(); ++i) {
        scores[missing[i]] = std::move((*fresh)[i]);
      }
    }
    absl::StatusOr<TrainRecord> rec = JointStep(
        model.privatizer, model.utility, opt, x, y, scores, rows, cfg);
    if (!rec.ok()) {
      const absl::StatusCode code =
          step > 1 && absl::IsFailedPrecondition(rec.status())
              ? absl::StatusCode::kAborted
              : rec.status().code();
      return absl::Status(code,
                          absl::StrCat("step ", step, ": ",
                                       rec.status().message()));
    }
    rec->step = step;
    model.history.skipped_samples += rec->skipped;
    model.history.records.push_back(*rec);
  }
  return model;
}

SmoothnessBound ComputeSmoothnessBound(const SmoothnessInputs& s) {
  SmoothnessBound b;
  b.l = 4.0 * s.m * s.m * s.hw + s.lambda * s.classes * s.hw;
  b.eta_max = 1.0 / b.l;
  return b;
}

absl::StatusOr<double> SgdRateBound(const SmoothnessInputs& s, double eta) {
  const SmoothnessBound b = ComputeSmoothnessBound(s);
  if (!(eta > 0.0) || eta >= b.eta_max) {
    return absl::InvalidArgumentError(absl::StrFormat(
        "step size %g must lie in (0, 1/L) = (0, %g)", eta, b.eta_max));
  }
  const double shrink = 1.0 - b.l * eta / 2.0;
  return s.gap / (eta * shrink * s.steps) +
         b.l * eta * s.sigma2 / (2.0 * shrink);
}

std::vector<double> LambdaGrid(double lo, double hi, size_t count) {
  std::vector<double> out;
  if (count == 0) return out;
  if (count == 1) return {lo};
  const double ratio = std::pow(hi / lo, 1.0 / static_cast<double>(count - 1));
  for (size_t i = 0; i < count; ++i) out.push_back(lo * std::pow(ratio, i));
  out.back() = hi;
  return out;
}

absl::StatusOr<std::vector<LambdaSweepPoint>> LambdaSweep(
    const TabularDataset& ds, const TrainConfig& cfg,
    std::span<const double> lambdas) {
  const Matrix x = SelectRows(ds.x, ds.train);
  absl::StatusOr<DensityModel> dm =
      DensityModel::Create(x, cfg.bandwidth, cfg.alpha);
  if (!dm.ok()) return dm.status();
  std::vector<LambdaSweepPoint> out;
  for (double lambda : lambdas) {
    TrainConfig c = cfg;
    c.lambda = lambda;
    absl::StatusOr<ClientModel> m = TrainClient(ds, c, &*dm);
    if (!m.ok()) return m.status();
    LambdaSweepPoint pt{lambda, 0.0, 0.0};
    if (!m->history.records.empty()) {
      pt.final_lp = m->history.records.back().lp;
      pt.final_lu = m->history.records.back().lu;
    }
    out.push_back(pt);
  }
  return out;
}

}  // namespace powerlearn
