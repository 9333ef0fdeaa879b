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

// Gaussian kernel density estimation with analytic scores and pointwise
// confidence intervals.
//
// The kernel is K(u) = (2 pi)^{-d/2} exp(-|u|^2 / 2), so that
// mu_K = int K^2 = 1 / (2^d pi^{d/2}). Everything is accumulated in log space:
// with d in the hundreds the raw density routinely underflows a double while
// its score and log stay well defined.

#ifndef POWERLEARN_DENSITY_H_
#define POWERLEARN_DENSITY_H_

#include <cstddef>
#include <span>
#include <vector>

#include "absl/status/statusor.h"
#include "powerlearn/numkit.h"

namespace powerlearn {

// Densities below this are reported as floored.
inline constexpr double kDensityFloor = 1e-12;

struct DensityEval {
  double fhat = 0.0;      // exp(log_fhat); may underflow to 0
  double log_fhat = 0.0;
  Vector score;           // grad log fhat
  Vector grad;            // grad fhat = fhat * score
  double halfwidth = 0.0;
  double log_halfwidth = 0.0;
  bool floored = false;   // fhat < kDensityFloor
};

class DensityModel {
 public:
  // bandwidth <= 0 selects Scott's rule.
  static absl::StatusOr<DensityModel> Create(Matrix samples, double bandwidth,
                                             double alpha = 0.05);

  size_t n() const { return samples_.rows(); }
  size_t d() const { return samples_.cols(); }
  double bandwidth() const { return h_; }
  double alpha() const { return alpha_; }
  double mu_k() const;
  double log_mu_k() const;
  // z_{1 - alpha/2}.
  double z() const { return z_; }
  const Matrix& samples() const { return samples_; }

  absl::StatusOr<double> Estimate(std::span<const double> x) const;
  absl::StatusOr<double> LogEstimate(std::span<const double> x) const;
  absl::StatusOr<Vector> Score(std::span<const double> x) const;
  absl::StatusOr<DensityEval> Evaluate(std::span<const double> x) const;

  // Evaluates every row of `xs`, in parallel.
  absl::StatusOr<std::vector<DensityEval>> EvaluateRows(const Matrix& xs) const;

 private:
  DensityModel(Matrix samples, double h, double alpha);
  absl::Status CheckDim(std::span<const double> x) const;
  // Fills log_fhat and (optionally) score.
  void Accumulate(std::span<const double> x, double& log_fhat,
                  Vector* score) const;

  Matrix samples_;
  double h_;
  double alpha_;
  double z_;
  double log_norm_;  // log(n) + d log(h) + (d/2) log(2 pi)
};

struct DensityCi {
  double fhat = 0.0;
  double halfwidth = 0.0;
};

absl::StatusOr<DensityCi> KdeCi(const DensityModel& m,
                                std::span<const double> x);

// halfwidth = z * sqrt(mu_k * fhat / (n h^d)).
double CiHalfwidth(double fhat, size_t n, double h, size_t d, double alpha);

// 1 / (2^d pi^{d/2}) and its logarithm.
double KernelConstant(size_t d);
double LogKernelConstant(size_t d);

// sigma_bar * n^{-1/(d+4)}, sigma_bar the mean per-coordinate standard
// deviation (population). Falls back to 1 when every column is constant.
double ScottBandwidth(const Matrix& samples);

// Inverse standard normal CDF. Rational approximation (Acklam) followed by
// one Halley step on erfc, accurate to ~1e-15 in double precision.
double InverseNormalCdf(double p);

// Average of |score(x_i)|^2 over rows of `eval`.
absl::StatusOr<double> FisherTrace(const DensityModel& m, const Matrix& eval);

}  // namespace powerlearn

#endif  // POWERLEARN_DENSITY_H_
