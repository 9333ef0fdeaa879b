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


// Lower bounds on the reconstruction error of any attacker, in the exact
// (identity-mean) form and the empirically calibrated KDE form.

#ifndef POWERLEARN_RECONBOUND_H_
#define POWERLEARN_RECONBOUND_H_

#include <cstdint>
#include <string>

#include "absl/status/statusor.h"
#include "powerlearn/density.h"

namespace powerlearn {

struct ReconBound {
  double value = 0.0;      // +inf when unbounded
  bool unbounded = false;  // zero denominator or non-positive Fisher trace
};

// d^2 / (eps^2 + fisher_trace).
ReconBound ReconLowerBound(size_t d, double eps, double fisher_trace);

struct ReconBoundInputs {
  size_t d = 1;
  double eps = 0.0;
  double fisher_trace = 0.0;
  size_t n = 1;
  double h = 1.0;
  double c1 = 0.0;
};

// d^2 / (eps^2 + fisher_trace + c1^2 / (n h^{d+4})).
absl::StatusOr<ReconBound> EmpiricalReconBound(const ReconBoundInputs& in);

// c1 such that c1^2 / (n h^{d+4}) equals the mean squared error of the KDE
// score against the true score -(x - mean) / sigma^2 on `held_out` points
// drawn from N(mean, sigma^2 I).
absl::StatusOr<double> EstimateC1(const DensityModel& m, const Matrix& held_out,
                                  std::span<const double> mean, double sigma);

// Same on fresh N(0, I_d) data: n reference samples, bandwidth h (<= 0 picks
// Scott's rule), `held_out` evaluation points.
absl::StatusOr<double> EstimateC1Gaussian(size_t d, size_t n, double h,
                                          size_t held_out, uint64_t seed);

struct LemmaDiagnostics {
  // Randomized map A(z) = z, z ~ N(mu, I_d).
  double identity_sq_dev = 0.0;
  double identity_trace_cov = 0.0;
  double identity_std_error = 0.0;
  bool identity_ok = false;
  // Deterministic map A(z) = mu.
  double deterministic_sq_dev = 0.0;
  double deterministic_trace_cov = 0.0;
  bool deterministic_ok = false;
  // Mean KDE score over the reference samples.
  double score_mean_norm = 0.0;
  double score_std_error = 0.0;
  bool score_ok = false;

  bool ok() const { return identity_ok && deterministic_ok && score_ok; }
};

// `samples` Monte-Carlo draws for the covariance identity; the score check
// averages over (up to) `samples` reference samples chosen with `seed`.
absl::StatusOr<LemmaDiagnostics> CheckLemmas(const DensityModel& m,
                                             size_t samples, uint64_t seed);

struct ReconReport {
  ReconBoundInputs inputs;
  ReconBound exact;
  ReconBound empirical;

  std::string ToJson() const;
};

absl::StatusOr<ReconReport> MakeReconReport(const ReconBoundInputs& in);

}  // namespace powerlearn

#endif  // POWERLEARN_RECONBOUND_H_
