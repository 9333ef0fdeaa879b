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

#include "powerlearn/density.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "absl/status/status.h"
#include "absl/strings/str_format.h"

namespace powerlearn {

double KernelConstant(size_t d) { return std::exp(LogKernelConstant(d)); }

double LogKernelConstant(size_t d) {
  const double dd = static_cast<double>(d);
  return -dd * std::numbers::ln2 - 0.5 * dd * std::log(std::numbers::pi);
}

double InverseNormalCdf(double p) {
  if (p <= 0.0) return -std::numeric_limits<double>::infinity();
  if (p >= 1.0) return std::numeric_limits<double>::infinity();
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                 -2.759285104469687e+02, 1.383577518672690e+02,
                                 -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                 -1.556989798598866e+02, 6.680131188771972e+01,
                                 -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                 -2.400758277161838e+00, -2.549732539343734e+00,
                                 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double e[] = {7.784695709041462e-03, 3.224671290700398e-01,
                                 2.445134137142996e+00, 3.754408661907416e+00};
  constexpr double kLow = 0.02425;
  double x;
  if (p < kLow) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((e[0] * q + e[1]) * q + e[2]) * q + e[3]) * q + 1.0);
  } else if (p <= 1.0 - kLow) {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) *
        q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log1p(-p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((e[0] * q + e[1]) * q + e[2]) * q + e[3]) * q + 1.0);
  }
  // Halley refinement.
  const double err = 0.5 * std::erfc(-x / std::numbers::sqrt2) - p;
  const double u = err * std::sqrt(2.0 * std::numbers::pi) * std::exp(0.5 * x * x);
  return x - u / (1.0 + 0.5 * x * u);
}

double CiHalfwidth(double fhat, size_t n, double h, size_t d, double alpha) {
  const double z = InverseNormalCdf(1.0 - 0.5 * alpha);
  return z * std::sqrt(KernelConstant(d) * fhat /
                       (static_cast<double>(n) * std::pow(h, d)));
}

double ScottBandwidth(const Matrix& samples) {
  const size_t n = samples.rows(), d = samples.cols();
  if (n == 0 || d == 0) return 1.0;
  double sigma_sum = 0.0;
  for (size_t j = 0; j < d; ++j) {
    double mean = 0.0;
    for (size_t i = 0; i < n; ++i) mean += samples(i, j);
    mean /= static_cast<double>(n);
    double ss = 0.0;
    for (size_t i = 0; i < n; ++i) {
      const double t = samples(i, j) - mean;
      ss += t * t;
    }
    sigma_sum += std::sqrt(ss / static_cast<double>(n));
  }
  double sigma = sigma_sum / static_cast<double>(d);
  if (!(sigma > 0.0)) sigma = 1.0;
  return sigma * std::pow(static_cast<double>(n), -1.0 / (d + 4.0));
}

DensityModel::DensityModel(Matrix samples, double h, double alpha)
    : samples_(std::move(samples)), h_(h), alpha_(alpha) {
  z_ = InverseNormalCdf(1.0 - 0.5 * alpha_);
  const double dd = static_cast<double>(d());
  log_norm_ = std::log(static_cast<double>(n())) + dd * std::log(h_) +
              0.5 * dd * std::log(2.0 * std::numbers::pi);
}

absl::StatusOr<DensityModel> DensityModel::Create(Matrix samples,
                                                  double bandwidth,
                                                  double alpha) {
  if (samples.rows() == 0 || samples.cols() == 0) {
    return absl::InvalidArgumentError("density needs at least one sample");
  }
  if (!samples.AllFinite()) {
    return absl::InvalidArgumentError("density samples must be finite");
  }
  if (!(alpha > 0.0 && alpha < 1.0)) {
    return absl::InvalidArgumentError(
        absl::StrFormat("alpha must lie in (0, 1), got %g", alpha));
  }
  if (!std::isfinite(bandwidth)) {
    return absl::InvalidArgumentError("bandwidth must be finite");
  }
  const double h = bandwidth > 0.0 ? bandwidth : ScottBandwidth(samples);
  return DensityModel(std::move(samples), h, alpha);
}

double DensityModel::mu_k() const { return KernelConstant(d()); }
double DensityModel::log_mu_k() const { return LogKernelConstant(d()); }

absl::Status DensityModel::CheckDim(std::span<const double> x) const {
  if (x.size() != d()) {
    return absl::InvalidArgumentError(absl::StrFormat(
        "point has dimension %d, density has %d", x.size(), d()));
  }
  for (double v : x) {
    if (!std::isfinite(v)) {
      return absl::InvalidArgumentError("point has non-finite coordinates");
    }
  }
  return absl::OkStatus();
}

// Score terms below this relative weight change the sum by < n * 1e-18.
constexpr double kNegligibleWeight = 1e-18;

void DensityModel::Accumulate(std::span<const double> x, double& log_fhat,
                              Vector* score) const {
  const size_t n = this->n(), d = this->d();
  const double inv2h2 = 0.5 / (h_ * h_);
  std::vector<double> q(n);
  double qmax = -std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < n; ++i) {
    const double* xi = &samples_.data()[i * d];
    double acc[4] = {0.0, 0.0, 0.0, 0.0};
    size_t j = 0;
    for (; j + 4 <= d; j += 4) {
      for (size_t k = 0; k < 4; ++k) {
        const double t = xi[j + k] - x[j + k];
        acc[k] += t * t;
      }
    }
    for (; j < d; ++j) {
      const double t = xi[j] - x[j];
      acc[0] += t * t;
    }
    q[i] = -((acc[0] + acc[1]) + (acc[2] + acc[3])) * inv2h2;
    qmax = std::max(qmax, q[i]);
  }
  double wsum = 0.0;
  if (score != nullptr) score->assign(d, 0.0);
  for (size_t i = 0; i < n; ++i) {
    const double w = std::exp(q[i] - qmax);
    wsum += w;
    if (score != nullptr && w > kNegligibleWeight) {
      const double* xi = &samples_.data()[i * d];
      for (size_t j = 0; j < d; ++j) (*score)[j] += w * (xi[j] - x[j]);
    }
  }
  log_fhat = qmax + std::log(wsum) - log_norm_;
  if (score != nullptr) {
    const double scale = 1.0 / (wsum * h_ * h_);
    for (double& s : *score) s *= scale;
  }
}

absl::StatusOr<double> DensityModel::LogEstimate(
    std::span<const double> x) const {
  if (absl::Status s = CheckDim(x); !s.ok()) return s;
  double lf;
  Accumulate(x, lf, nullptr);
  return lf;
}

absl::StatusOr<double> DensityModel::Estimate(std::span<const double> x) const {
  absl::StatusOr<double> lf = LogEstimate(x);
  if (!lf.ok()) return lf.status();
  return std::exp(*lf);
}

absl::StatusOr<Vector> DensityModel::Score(std::span<const double> x) const {
  if (absl::Status s = CheckDim(x); !s.ok()) return s;
  double lf;
  Vector score;
  Accumulate(x, lf, &score);
  return score;
}

absl::StatusOr<DensityEval> DensityModel::Evaluate(
    std::span<const double> x) const {
  if (absl::Status s = CheckDim(x); !s.ok()) return s;
  DensityEval ev;
  Accumulate(x, ev.log_fhat, &ev.score);
  ev.fhat = std::exp(ev.log_fhat);
  ev.grad.resize(ev.score.size());
  for (size_t j = 0; j < ev.score.size(); ++j) ev.grad[j] = ev.fhat * ev.score[j];
  const double dd = static_cast<double>(d());
  ev.log_halfwidth =
      std::log(z_) + 0.5 * (log_mu_k() + ev.log_fhat -
                            std::log(static_cast<double>(n())) -
                            dd * std::log(h_));
  ev.halfwidth = std::exp(ev.log_halfwidth);
  ev.floored = ev.fhat < kDensityFloor;
  return ev;
}

absl::StatusOr<std::vector<DensityEval>> DensityModel::EvaluateRows(
    const Matrix& xs) const {
  if (xs.rows() > 0 && xs.cols() != d()) {
    return absl::InvalidArgumentError(absl::StrFormat(
        "points have dimension %d, density has %d", xs.cols(), d()));
  }
  std::vector<DensityEval> out(xs.rows());
  std::vector<absl::Status> errors(xs.rows());
  ParallelFor(xs.rows(), [&](size_t i) {
    absl::StatusOr<DensityEval> ev = Evaluate(xs.row(i));
    if (ev.ok()) {
      out[i] = std::move(*ev);
    } else {
      errors[i] = ev.status();
    }
  });
  for (size_t i = 0; i < errors.size(); ++i) {
    if (!errors[i].ok()) {
      return absl::Status(errors[i].code(),
                          absl::StrFormat("row %d: %s", i, errors[i].message()));
    }
  }
  return out;
}

absl::StatusOr<DensityCi> KdeCi(const DensityModel& m,
                                std::span<const double> x) {
  absl::StatusOr<DensityEval> ev = m.Evaluate(x);
  if (!ev.ok()) return ev.status();
  return DensityCi{ev->fhat, ev->halfwidth};
}

absl::StatusOr<double> FisherTrace(const DensityModel& m, const Matrix& eval) {
  if (eval.rows() < 2) {
    return absl::InvalidArgumentError(
        "Fisher trace needs at least two evaluation samples");
  }
  if (eval.cols() != m.d()) {
    return absl::InvalidArgumentError("evaluation samples have wrong dimension");
  }
  std::vector<double> sq(eval.rows());
  std::vector<absl::Status> errors(eval.rows());
  ParallelFor(eval.rows(), [&](size_t i) {
    absl::StatusOr<Vector> s = m.Score(eval.row(i));
    if (!s.ok()) {
      errors[i] = s.status();
      return;
    }
    sq[i] = Dot(*s, *s);
  });
  for (const absl::Status& e : errors) {
    if (!e.ok()) return e;
  }
  double total = 0.0;
  for (double v : sq) total += v;
  return total / static_cast<double>(eval.rows());
}

}  // namespace powerlearn
