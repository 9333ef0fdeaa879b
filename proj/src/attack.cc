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


#include "powerlearn/attack.h"

#include <cmath>
#include <limits>

#include "absl/strings/str_format.h"
#include "json.hpp"
#include "powerlearn/rng.h"
#include "powerlearn/trainer.h"

namespace powerlearn {

absl::Status AttackConfig::Validate() const {
  if (!(learning_rate > 0.0) || batch_size == 0) {
    return absl::InvalidArgumentError("attacker needs lr > 0 and batch > 0");
  }
  for (size_t h : hidden) {
    if (h == 0) return absl::InvalidArgumentError("hidden width must be > 0");
  }
  return absl::OkStatus();
}

absl::StatusOr<MlpParams> TrainDecoder(const Matrix& z, const Matrix& x,
                                       const AttackConfig& cfg, uint64_t seed) {
  if (absl::Status s = cfg.Validate(); !s.ok()) return s;
  if (z.rows() == 0) return absl::InvalidArgumentError("empty public set");
  if (z.rows() != x.rows()) {
    return absl::InvalidArgumentError("embedding and feature counts differ");
  }
  std::vector<size_t> sizes = {z.cols()};
  sizes.insert(sizes.end(), cfg.hidden.begin(), cfg.hidden.end());
  sizes.push_back(x.cols());
  Rng rng(seed);
  Rng init = rng.Fork(0);
  MlpParams net = MakeMlp(sizes, Activation::kRelu, Activation::kIdentity, init);
  const size_t count = net.ParameterCount();
  Optimizer opt(OptimizerKind::kAdam, cfg.learning_rate, count);
  Vector theta = net.Flatten();
  const size_t n = z.rows();
  const size_t batch = std::min(cfg.batch_size, n);
  const double scale = 2.0 / (double(batch) * double(x.cols()));
  std::vector<size_t> order(n), rows(batch);
  for (size_t i = 0; i < n; ++i) order[i] = i;
  Rng shuffle = rng.Fork(2);
  size_t cursor = n;
  constexpr size_t kChunks = 4;
  std::vector<Vector> chunk_grad(kChunks, Vector(count));
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
      Vector go(x.cols());
      for (size_t b = c; b < batch; b += kChunks) {
        const size_t r = rows[b];
        MlpTrace tr = MlpForwardTrace(net, z.row(r));
        for (size_t j = 0; j < x.cols(); ++j) go[j] = tr.output[j] - x(r, j);
        MlpBackward(net, tr, go, grad, scale);
      }
    });
    Vector grad(count, 0.0);
    for (const Vector& cg : chunk_grad) {
      for (size_t i = 0; i < count; ++i) grad[i] += cg[i];
    }
    for (double g : grad) {
      if (!std::isfinite(g)) {
        return absl::AbortedError(
            absl::StrFormat("decoder diverged at step %d", step + 1));
      }
    }
    opt.Step(theta, grad);
    if (absl::Status s = net.Unflatten(theta); !s.ok()) return s;
  }
  return net;
}

absl::StatusOr<Attacker> TrainAttacker(const Matrix& public_x,
                                       const PrivatizerParams& priv,
                                       const AttackConfig& cfg, uint64_t seed) {
  if (public_x.rows() == 0) return absl::InvalidArgumentError("empty public set");
  absl::StatusOr<PrivatizedRows> pr = PrivatizeRows(priv, public_x);
  if (!pr.ok()) return pr.status();
  std::vector<size_t> keep;
  for (size_t i = 0; i < public_x.rows(); ++i) {
    if (pr->ok[i]) keep.push_back(i);
  }
  if (keep.empty()) {
    return absl::InvalidArgumentError("no public row could be privatized");
  }
  absl::StatusOr<MlpParams> dec = TrainDecoder(
      SelectRows(pr->z, keep), SelectRows(public_x, keep), cfg, seed);
  if (!dec.ok()) return dec.status();
  return Attacker{*std::move(dec), keep.size()};
}

absl::StatusOr<AttackReport> LeakageFromPredictions(const FeatureSchema& schema,
                                                    const Matrix& pred,
                                                    const Matrix& truth) {
  if (pred.rows() != truth.rows() || pred.cols() != truth.cols()) {
    return absl::InvalidArgumentError("prediction and truth shapes differ");
  }
  if (truth.cols() != schema.dim) {
    return absl::InvalidArgumentError(absl::StrFormat(
        "features have %d columns, schema has %d", truth.cols(), schema.dim));
  }
  AttackReport rep;
  rep.n = truth.rows();
  rep.categorical_groups = schema.groups.size();
  if (rep.n == 0) return rep;
  const double cells = double(truth.size());
  double se = 0.0, mp = 0.0, mt = 0.0;
  for (size_t i = 0; i < truth.size(); ++i) {
    const double e = pred.data()[i] - truth.data()[i];
    se += e * e;
    mp += pred.data()[i];
    mt += truth.data()[i];
  }
  mp /= cells;
  mt /= cells;
  double cov = 0.0, vp = 0.0, vt = 0.0;
  for (size_t i = 0; i < truth.size(); ++i) {
    const double a = pred.data()[i] - mp, b = truth.data()[i] - mt;
    cov += a * b;
    vp += a * a;
    vt += b * b;
  }
  rep.mse = se / cells;
  rep.sq_error = se / double(rep.n);
  rep.correlation = vp > 0.0 && vt > 0.0 ? cov / std::sqrt(vp * vt) : 0.0;
  if (schema.groups.empty()) {
    rep.categorical_accuracy = std::numeric_limits<double>::quiet_NaN();
    return rep;
  }
  size_t hits = 0;
  for (size_t r = 0; r < rep.n; ++r) {
    bool all = true;
    for (const CategoricalGroup& g : schema.groups) {
      std::span<const double> p = pred.row(r).subspan(g.offset, g.levels.size());
      std::span<const double> t = truth.row(r).subspan(g.offset, g.levels.size());
      if (ArgMax(p) != ArgMax(t)) {
        all = false;
        break;
      }
    }
    if (all) ++hits;
  }
  rep.categorical_accuracy = double(hits) / double(rep.n);
  return rep;
}

absl::StatusOr<AttackReport> LeakageMetrics(const MlpParams& decoder,
                                            const FeatureSchema& schema,
                                            const Matrix& private_x,
                                            const Matrix& embeddings) {
  if (decoder.output_size() != schema.dim ||
      (embeddings.rows() > 0 && decoder.input_size() != embeddings.cols())) {
    return absl::InvalidArgumentError(
        "attacker decoder does not match the bundle schema");
  }
  if (embeddings.rows() != private_x.rows()) {
    return absl::InvalidArgumentError("bundle rows do not match private rows");
  }
  Matrix pred(embeddings.rows(), schema.dim);
  std::vector<absl::Status> errors(embeddings.rows());
  ParallelFor(embeddings.rows(), [&](size_t i) {
    absl::StatusOr<Vector> out = MlpForward(decoder, embeddings.row(i));
    if (!out.ok()) {
      errors[i] = out.status();
      return;
    }
    std::copy(out->begin(), out->end(), pred.row(i).begin());
  });
  for (const absl::Status& e : errors) {
    if (!e.ok()) return e;
  }
  return LeakageFromPredictions(schema, pred, private_x);
}

std::string AttackReport::ToJson() const {
  nlohmann::ordered_json j;
  if (std::isnan(categorical_accuracy)) {
    j["categorical_accuracy"] = nullptr;
  } else {
    j["categorical_accuracy"] = categorical_accuracy;
  }
  j["categorical_groups"] = categorical_groups;
  j["mse"] = mse;
  j["sq_error"] = sq_error;
  j["correlation"] = correlation;
  j["n"] = n;
  return j.dump(2);
}

}  // namespace powerlearn
