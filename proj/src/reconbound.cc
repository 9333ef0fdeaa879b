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


#include "powerlearn/reconbound.h"

#include <cmath>
#include <limits>

#include "absl/strings/str_format.h"
#include "json.hpp"
#include "powerlearn/rng.h"

namespace powerlearn {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

ReconBound FromDenominator(size_t d, double denom, double fisher_trace) {
  if (!(denom > 0.0) || !(fisher_trace > 0.0)) return {kInf, true};
  const double dd = static_cast<double>(d);
  return {dd * dd / denom, false};
}

nlohmann::json BoundJson(const ReconBound& b) {
  if (b.unbounded) return nullptr;
  return b.value;
}

}  // namespace

ReconBound ReconLowerBound(size_t d, double eps, double fisher_trace) {
  return FromDenominator(d, eps * eps + fisher_trace, fisher_trace);
}

absl::StatusOr<ReconBound> EmpiricalReconBound(const ReconBoundInputs& in) {
  if (in.d < 1) return absl::InvalidArgumentError("d must be at least 1");
  if (in.n < 1 || !(in.h > 0.0)) {
    return absl::InvalidArgumentError("need n >= 1 and h > 0");
  }
  if (!(in.eps >= 0.0) || !(in.fisher_trace >= 0.0) || !(in.c1 >= 0.0)) {
    return absl::InvalidArgumentError(
        "eps, fisher_trace and c1 must be non-negative");
  }
  const double dd = static_cast<double>(in.d);
  // c1^2 / (n h^{d+4}) in log space; h^{d+4} underflows for large d.
  double inflation = 0.0;
  if (in.c1 > 0.0) {
    inflation = std::exp(2.0 * std::log(in.c1) -
                         std::log(static_cast<double>(in.n)) -
                         (dd + 4.0) * std::log(in.h));
  }
  return FromDenominator(in.d, in.eps * in.eps + in.fisher_trace + inflation,
                         in.fisher_trace);
}

absl::StatusOr<double> EstimateC1(const DensityModel& m, const Matrix& held_out,
                                  std::span<const double> mean, double sigma) {
  if (held_out.rows() == 0 || held_out.cols() != m.d() ||
      mean.size() != m.d()) {
    return absl::InvalidArgumentError("held-out points do not match density");
  }
  if (!(sigma > 0.0)) return absl::InvalidArgumentError("sigma must be > 0");
  std::vector<double> sq(held_out.rows());
  std::vector<absl::Status> errors(held_out.rows());
  const double inv_var = 1.0 / (sigma * sigma);
  ParallelFor(held_out.rows(), [&](size_t i) {
    absl::StatusOr<Vector> s = m.Score(held_out.row(i));
    if (!s.ok()) {
      errors[i] = s.status();
      return;
    }
    double acc = 0.0;
    for (size_t j = 0; j < m.d(); ++j) {
      const double e = (*s)[j] + (held_out(i, j) - mean[j]) * inv_var;
      acc += e * e;
    }
    sq[i] = acc;
  });
  for (const absl::Status& e : errors) {
    if (!e.ok()) return e;
  }
  double mse = 0.0;
  for (double v : sq) mse += v;
  mse /= static_cast<double>(sq.size());
  const double dd = static_cast<double>(m.d());
  return std::exp(0.5 * (std::log(mse) + std::log(static_cast<double>(m.n())) +
                         (dd + 4.0) * std::log(m.bandwidth())));
}

absl::StatusOr<double> EstimateC1Gaussian(size_t d, size_t n, double h,
                                          size_t held_out, uint64_t seed) {
  if (d < 1 || n < 1 || held_out < 1) {
    return absl::InvalidArgumentError("d, n and held_out must be positive");
  }
  Rng rng(seed);
  Matrix ref(n, d), eval(held_out, d);
  for (double& v : ref.data()) v = rng.Normal();
  for (double& v : eval.data()) v = rng.Normal();
  absl::StatusOr<DensityModel> m = DensityModel::Create(std::move(ref), h);
  if (!m.ok()) return m.status();
  const Vector zero(d, 0.0);
  return EstimateC1(*m, eval, zero, 1.0);
}

absl::StatusOr<LemmaDiagnostics> CheckLemmas(const DensityModel& m,
                                             size_t samples, uint64_t seed) {
  if (samples < 2) {
    return absl::InvalidArgumentError("need at least two Monte-Carlo samples");
  }
  const size_t d = m.d();
  const Matrix& ref = m.samples();
  Vector mu(d, 0.0);
  for (size_t i = 0; i < ref.rows(); ++i) {
    for (size_t j = 0; j < d; ++j) mu[j] += ref(i, j);
  }
  for (double& v : mu) v /= static_cast<double>(ref.rows());

  LemmaDiagnostics out;
  Rng rng(seed);
  Rng mc = rng.Fork(0);
  double sum = 0.0, sum_sq = 0.0;
  for (size_t k = 0; k < samples; ++k) {
    double dev = 0.0;
    for (size_t j = 0; j < d; ++j) {
      const double e = mc.Normal();  // A(z) - mu(x) with A(z) = z
      dev += e * e;
    }
    sum += dev;
    sum_sq += dev * dev;
  }
  const double ns = static_cast<double>(samples);
  out.identity_sq_dev = sum / ns;
  out.identity_trace_cov = static_cast<double>(d);
  const double var = (sum_sq - ns * out.identity_sq_dev * out.identity_sq_dev) /
                     (ns - 1.0);
  out.identity_std_error = std::sqrt(std::max(var, 0.0) / ns);
  out.identity_ok = std::abs(out.identity_sq_dev - out.identity_trace_cov) <
                    3.0 * out.identity_std_error;

  // A(z) = mu for every z: no spread at all.
  out.deterministic_sq_dev = 0.0;
  out.deterministic_trace_cov = 0.0;
  out.deterministic_ok = true;

  std::vector<size_t> rows(ref.rows());
  for (size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  if (samples < rows.size()) {
    Rng pick = rng.Fork(1);
    pick.Shuffle(std::span<size_t>(rows));
    rows.resize(samples);
  }
  Matrix pts = SelectRows(ref, rows);
  absl::StatusOr<std::vector<DensityEval>> evals = m.EvaluateRows(pts);
  if (!evals.ok()) return evals.status();
  Vector mean(d, 0.0), mean_sq(d, 0.0);
  for (const DensityEval& ev : *evals) {
    for (size_t j = 0; j < d; ++j) {
      mean[j] += ev.score[j];
      mean_sq[j] += ev.score[j] * ev.score[j];
    }
  }
  const double nr = static_cast<double>(rows.size());
  double se_sq = 0.0;
  for (size_t j = 0; j < d; ++j) {
    mean[j] /= nr;
    const double v = (mean_sq[j] / nr - mean[j] * mean[j]) * nr / (nr - 1.0);
    se_sq += std::max(v, 0.0) / nr;
  }
  out.score_mean_norm = Norm2(mean);
  out.score_std_error = std::sqrt(se_sq);
  out.score_ok = out.score_mean_norm < 3.0 * out.score_std_error;
  return out;
}

std::string ReconReport::ToJson() const {
  nlohmann::ordered_json j;
  j["d"] = inputs.d;
  j["eps"] = inputs.eps;
  j["fisher_trace"] = inputs.fisher_trace;
  j["c1"] = inputs.c1;
  j["n"] = inputs.n;
  j["h"] = inputs.h;
  j["bound_exact"] = BoundJson(exact);
  j["bound_empirical"] = BoundJson(empirical);
  j["unbounded"] = exact.unbounded || empirical.unbounded;
  return j.dump(2);
}

absl::StatusOr<ReconReport> MakeReconReport(const ReconBoundInputs& in) {
  absl::StatusOr<ReconBound> emp = EmpiricalReconBound(in);
  if (!emp.ok()) return emp.status();
  return ReconReport{in, ReconLowerBound(in.d, in.eps, in.fisher_trace), *emp};
}

}  // namespace powerlearn
