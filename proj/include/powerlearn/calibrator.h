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


// Per-sample privacy calibration: confidence-bracketed epsilon, the final
// high-probability bound, (epsilon, delta)-DP conversion and release
// filtering.
//
// The CI ratio r = halfwidth / fhat is formed in log space, so the bounds
// stay meaningful when fhat itself underflows (high-dimensional data). The
// shrunken denominator fhat * (1 - r) is clamped at kDenominatorFloor
// relative to fhat.

#ifndef POWERLEARN_CALIBRATOR_H_
#define POWERLEARN_CALIBRATOR_H_

#include <span>
#include <string>
#include <vector>

#include "absl/status/statusor.h"
#include "powerlearn/density.h"
#include "powerlearn/privatizer.h"

namespace powerlearn {

inline constexpr double kDenominatorFloor = 1e-12;

struct EpsilonPrime {
  double eps_prime = 0.0;
  double lower = 0.0;  // evaluated at fhat - halfwidth
  double upper = 0.0;  // evaluated at fhat + halfwidth
  bool clamped = false;
};

// Core arithmetic. `score` is grad log fhat, `jac` the logdet x-gradient.
EpsilonPrime EpsilonPrimeFromTerms(std::span<const double> score,
                                   double log_fhat, double log_halfwidth,
                                   std::span<const double> jac);
// Plain-space form: grad fhat, fhat > 0, halfwidth >= 0.
absl::StatusOr<EpsilonPrime> EpsilonPrimeFromDensity(
    std::span<const double> grad_fhat, double fhat, double halfwidth,
    std::span<const double> jac);

absl::StatusOr<EpsilonPrime> ComputeEpsilonPrime(const PrivatizerParams& p,
                                                 const DensityModel& density,
                                                 std::span<const double> x);

// d * sqrt(mu_K / (n h^d) / (4 fhat)) * z_{1-alpha/2}.
double EpsilonAddOn(size_t d, size_t n, double h, double log_fhat,
                    double alpha);
double EpsilonFinal(double eps_prime, size_t d, size_t n, double h,
                    double log_fhat, double alpha);
absl::StatusOr<double> ComputeEpsilonFinal(const PrivatizerParams& p,
                                           const DensityModel& density,
                                           std::span<const double> x);

struct DpGuarantee {
  double eps_lip = 0.0;
  double lambda_adj = 1.0;
  double eps_dp = 0.0;
  double delta = 0.0;
};
absl::StatusOr<DpGuarantee> ToDp(double eps_lip, double lambda_adj,
                                 double alpha);

struct CalibrationRecord {
  size_t index = 0;
  bool privatizable = true;
  double eps_prime = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  double eps_final = 0.0;
  double alpha = 0.05;
  double fhat = 0.0;
  double log_fhat = 0.0;
  double halfwidth = 0.0;
  bool clamped = false;
  bool floored = false;
  bool released = false;
};

// Calibrates every row of `x`. Unprivatizable rows get privatizable = false
// and infinite epsilon. `indices` (optional) labels the records.
absl::StatusOr<std::vector<CalibrationRecord>> Calibrate(
    const PrivatizerParams& p, const DensityModel& density, const Matrix& x,
    std::span<const size_t> indices = {});

struct HistogramSpec {
  double lo = 0.0;
  double width = 0.25;
  size_t bins = 40;  // values above the last edge land in the last bin

  std::vector<double> Edges() const;
  size_t BinOf(double v) const;
};

struct PrivacyReport {
  std::vector<double> bin_edges;
  std::vector<size_t> counts;           // all calibrated samples
  std::vector<size_t> released_counts;  // released samples only
  double alpha = 0.05;
  double eps_target = 0.0;
  double lambda_adj = 1.0;
  size_t total = 0;
  size_t released_count = 0;
  size_t clamp_count = 0;
  size_t floored_count = 0;
  size_t unprivatizable_count = 0;
  bool empty_release = false;
  double dataset_eps = 0.0;  // max eps_final over released samples
  DpGuarantee dp;

  std::string ToJson() const;
};

struct ReleaseDecision {
  std::vector<size_t> released;  // positions into the record vector
  PrivacyReport report;
};

// Sets `released` on each record.
ReleaseDecision FilterRelease(std::vector<CalibrationRecord>& records,
                              double eps_target, double lambda_adj = 1.0,
                              const HistogramSpec& hist = {});

// index,eps_prime,eps_final,fhat,halfwidth,released
std::string CalibrationCsv(std::span<const CalibrationRecord> records);

// Wasserstein-1 distance between two empirical distributions.
double Wasserstein1(std::span<const double> a, std::span<const double> b);

// Same for two histograms on shared `edges` (mass at bin centres).
double HistogramWasserstein1(std::span<const size_t> a,
                             std::span<const size_t> b,
                             std::span<const double> edges);
double HistogramMean(std::span<const size_t> counts,
                     std::span<const double> edges);

}  // namespace powerlearn

#endif  // POWERLEARN_CALIBRATOR_H_
