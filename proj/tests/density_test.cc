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

#include <cmath>
#include <numbers>

#include "gtest/gtest.h"
#include "powerlearn/rng.h"

namespace powerlearn {
namespace {

double Phi(double x) {
  return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
}

Matrix GaussianSamples(size_t n, size_t d, double sigma, uint64_t seed) {
  Rng rng(seed);
  Matrix m(n, d);
  for (size_t i = 0; i < n; ++i)
    for (size_t j = 0; j < d; ++j) m(i, j) = rng.Normal(0.0, sigma);
  return m;
}

DensityModel Make(Matrix x, double h, double alpha = 0.05) {
  absl::StatusOr<DensityModel> m = DensityModel::Create(std::move(x), h, alpha);
  EXPECT_TRUE(m.ok()) << m.status();
  return *std::move(m);
}

TEST(KdeEstimateTest, SingleSampleAtItself) {
  DensityModel m = Make(*Matrix::FromData(1, 1, {0.7}), 1.0);
  EXPECT_NEAR(*m.Estimate(std::vector<double>{0.7}), 0.3989423, 1e-7);
}

TEST(KdeEstimateTest, SymmetricPair) {
  DensityModel m = Make(*Matrix::FromData(2, 1, {-1.0, 1.0}), 1.0);
  EXPECT_NEAR(*m.Estimate(std::vector<double>{0.0}), 0.2419707, 1e-7);
}

TEST(KdeEstimateTest, StandardNormalRecovery) {
  DensityModel m = Make(GaussianSamples(5000, 1, 1.0, 11), 0.0);
  for (double x : {-1.0, 0.0, 1.0}) {
    EXPECT_LT(std::abs(*m.Estimate(std::vector<double>{x}) - Phi(x)), 0.02)
        << "x=" << x;
  }
}

TEST(KdeEstimateTest, DimensionMismatch) {
  DensityModel m = Make(GaussianSamples(10, 2, 1.0, 1), 0.5);
  EXPECT_FALSE(m.Estimate(std::vector<double>{0.0}).ok());
  EXPECT_FALSE(m.Score(std::vector<double>{0.0, 0.0, 0.0}).ok());
}

TEST(KdeEstimateTest, InvalidConstruction) {
  EXPECT_FALSE(DensityModel::Create(Matrix(0, 1), 1.0).ok());
  EXPECT_FALSE(DensityModel::Create(Matrix(3, 1), 1.0, 0.0).ok());
  EXPECT_FALSE(DensityModel::Create(Matrix(3, 1), 1.0, 1.0).ok());
}

TEST(KdeEstimateTest, HighDimensionStaysInLogSpace) {
  DensityModel m = Make(GaussianSamples(50, 200, 1.0, 3), 0.3);
  Vector far(200, 5.0);
  absl::StatusOr<DensityEval> ev = m.Evaluate(far);
  ASSERT_TRUE(ev.ok());
  EXPECT_TRUE(std::isfinite(ev->log_fhat));
  EXPECT_TRUE(ev->floored);
  for (double s : ev->score) EXPECT_TRUE(std::isfinite(s));
}

TEST(KdeScoreTest, SingleSample) {
  DensityModel m = Make(*Matrix::FromData(1, 2, {1.0, -2.0}), 0.5);
  Vector s = *m.Score(std::vector<double>{0.2, 0.3});
  EXPECT_DOUBLE_EQ(s[0], (1.0 - 0.2) / 0.25);
  EXPECT_DOUBLE_EQ(s[1], (-2.0 - 0.3) / 0.25);
}

TEST(KdeScoreTest, SymmetricZero) {
  DensityModel m = Make(*Matrix::FromData(2, 1, {-1.0, 1.0}), 1.0);
  EXPECT_EQ((*m.Score(std::vector<double>{0.0}))[0], 0.0);
}

TEST(KdeScoreTest, MatchesFiniteDifferences) {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const size_t d = 1 + rng.Below(4);
    DensityModel m =
        Make(GaussianSamples(30, d, 1.0, 100 + trial), rng.Uniform(0.3, 1.5));
    Vector x(d);
    for (double& v : x) v = rng.Normal();
    absl::StatusOr<Vector> fd = GradOracle(
        [&](std::span<const double> p) { return *m.LogEstimate(p); }, x);
    ASSERT_TRUE(fd.ok());
    EXPECT_LT(MaxRelativeError(*m.Score(x), *fd), 1e-6) << "trial " << trial;
  }
}

TEST(KdeScoreTest, GradIsDensityTimesScore) {
  DensityModel m = Make(GaussianSamples(40, 3, 1.0, 8), 0.6);
  DensityEval ev = *m.Evaluate(std::vector<double>{0.1, 0.2, -0.3});
  absl::StatusOr<Vector> fd = GradOracle(
      [&](std::span<const double> p) { return *m.Estimate(p); },
      std::vector<double>{0.1, 0.2, -0.3});
  EXPECT_LT(MaxRelativeError(ev.grad, *fd), 1e-6);
}

TEST(KdeCiTest, KernelConstants) {
  EXPECT_NEAR(KernelConstant(1), 0.2820948, 1e-7);
  EXPECT_NEAR(KernelConstant(2), 0.0795775, 1e-7);
  EXPECT_NEAR(std::exp(LogKernelConstant(104)), KernelConstant(104), 1e-300);
}

TEST(KdeCiTest, WorkedHalfwidth) {
  EXPECT_NEAR(CiHalfwidth(0.4, 1000, 0.3, 1, 0.05), 0.0380113, 1e-6);
}

TEST(KdeCiTest, HalfwidthMatchesFormula) {
  DensityModel m = Make(GaussianSamples(200, 2, 1.0, 2), 0.4, 0.1);
  DensityCi ci = *KdeCi(m, std::vector<double>{0.3, -0.1});
  EXPECT_NEAR(ci.halfwidth, CiHalfwidth(ci.fhat, 200, 0.4, 2, 0.1), 1e-15);
  EXPECT_NEAR(ci.halfwidth,
              m.z() * std::sqrt(m.mu_k() * ci.fhat / (200 * 0.16)), 1e-15);
}

TEST(InverseNormalCdfTest, AgainstReferenceQuantiles) {
  const std::pair<double, double> kCases[] = {
      {1e-12, -7.034483825301132}, {1e-06, -4.753424308822899},
      {0.001, -3.090232306167813}, {0.02425, -1.9729610513118845},
      {0.025, -1.9599639845400538}, {0.1, -1.2815515655446008},
      {0.3, -0.5244005127080407}, {0.5, 0.0},
      {0.7, 0.5244005127080407},  {0.975, 1.9599639845400536},
      {0.99, 2.3263478740408408}, {0.999999, 4.753424308817089}};
  for (auto [p, x] : kCases) EXPECT_NEAR(InverseNormalCdf(p), x, 1.2e-9) << p;
}

TEST(InverseNormalCdfTest, RoundTripsThroughErfc) {
  for (int i = 1; i < 1000; ++i) {
    const double p = i / 1000.0;
    const double x = InverseNormalCdf(p);
    EXPECT_NEAR(0.5 * std::erfc(-x / std::numbers::sqrt2), p, 1e-14);
  }
}

TEST(ScottBandwidthTest, Formula) {
  Matrix x = *Matrix::FromData(4, 1, {1.0, 2.0, 3.0, 4.0});
  EXPECT_DOUBLE_EQ(ScottBandwidth(x), std::sqrt(1.25) * std::pow(4.0, -0.2));
  EXPECT_DOUBLE_EQ(ScottBandwidth(Matrix(3, 2)), std::pow(3.0, -1.0 / 6.0));
}

TEST(FisherTraceTest, SingleSampleAtItself) {
  DensityModel m = Make(*Matrix::FromData(1, 2, {0.5, 0.5}), 1.0);
  Matrix eval = *Matrix::FromData(2, 2, {0.5, 0.5, 0.5, 0.5});
  EXPECT_EQ(*FisherTrace(m, eval), 0.0);
}

TEST(FisherTraceTest, NeedsTwoSamples) {
  DensityModel m = Make(GaussianSamples(10, 1, 1.0, 1), 1.0);
  EXPECT_FALSE(FisherTrace(m, Matrix(1, 1)).ok());
}

TEST(FisherTraceTest, GaussianSigmaTwo) {
  Matrix x = GaussianSamples(5000, 2, 2.0, 21);
  DensityModel m = Make(x, 0.0);
  const double tr = *FisherTrace(m, x);
  EXPECT_NEAR(tr, 0.5, 0.1);
}

TEST(FisherTraceTest, StandardGaussian) {
  Matrix x = GaussianSamples(5000, 2, 1.0, 31);
  DensityModel m = Make(x, 0.0);
  const double tr = *FisherTrace(m, x);
  EXPECT_NEAR(tr, 2.0, 0.4);
}

TEST(FisherTraceTest, PermutationInvariantAndNonNegative) {
  DensityModel m = Make(GaussianSamples(100, 3, 1.0, 4), 0.5);
  Matrix eval = GaussianSamples(50, 3, 1.0, 5);
  std::vector<size_t> perm(50);
  for (size_t i = 0; i < 50; ++i) perm[i] = i;
  Rng rng(6);
  rng.Shuffle(std::span<size_t>(perm));
  const double a = *FisherTrace(m, eval);
  const double b = *FisherTrace(m, SelectRows(eval, perm));
  EXPECT_GE(a, 0.0);
  EXPECT_NEAR(a, b, 1e-12 * a);
}

TEST(DensityPropertyTest, IntegratesToOne) {
  Matrix x = GaussianSamples(200, 1, 1.0, 41);
  DensityModel m = Make(x, 0.0);
  double lo = x(0, 0), hi = x(0, 0);
  for (size_t i = 0; i < x.rows(); ++i) {
    lo = std::min(lo, x(i, 0));
    hi = std::max(hi, x(i, 0));
  }
  lo -= 8 * m.bandwidth();
  hi += 8 * m.bandwidth();
  const int steps = 20000;
  const double dx = (hi - lo) / steps;
  double total = 0.0;
  for (int k = 0; k <= steps; ++k) {
    const double w = (k == 0 || k == steps) ? 0.5 : 1.0;
    total += w * *m.Estimate(std::vector<double>{lo + k * dx});
  }
  EXPECT_NEAR(total * dx, 1.0, 1e-3);
}

TEST(DensityPropertyTest, ConfidenceIntervalCoverage) {
  // 200 probes on each of 20 independent data sets.
  int inside = 0;
  for (uint64_t k = 0; k < 20; ++k) {
    DensityModel m = Make(GaussianSamples(2000, 1, 1.0, 51 + k), 0.0, 0.05);
    Rng rng(500 + k);
    for (int i = 0; i < 200; ++i) {
      const double x = rng.Normal();
      DensityCi ci = *KdeCi(m, std::vector<double>{x});
      if (std::abs(ci.fhat - Phi(x)) <= ci.halfwidth) ++inside;
    }
  }
  EXPECT_GE(inside, 3600);
}

TEST(DensityPropertyTest, ScoreHasZeroMeanUnderModel) {
  Matrix ref = GaussianSamples(300, 2, 1.0, 61);
  DensityModel m = Make(ref, 0.0);
  Rng rng(62);
  const int kDraws = 20000;
  Matrix draws(kDraws, 2);
  for (int k = 0; k < kDraws; ++k) {
    const size_t i = rng.Below(ref.rows());
    for (size_t j = 0; j < 2; ++j)
      draws(k, j) = ref(i, j) + m.bandwidth() * rng.Normal();
  }
  std::vector<DensityEval> evs = *m.EvaluateRows(draws);
  for (size_t j = 0; j < 2; ++j) {
    double mean = 0.0, sq = 0.0;
    for (const DensityEval& e : evs) mean += e.score[j];
    mean /= kDraws;
    for (const DensityEval& e : evs) sq += (e.score[j] - mean) * (e.score[j] - mean);
    const double se = std::sqrt(sq / (kDraws - 1)) / std::sqrt(kDraws);
    EXPECT_LT(std::abs(mean), 3.0 * se) << "coordinate " << j;
  }
}

}  // namespace
}  // namespace powerlearn
