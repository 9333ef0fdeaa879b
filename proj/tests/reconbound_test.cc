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

#include "gmock/gmock.h"
#include "gtest/gtest.h"
#include "json.hpp"
#include "powerlearn/rng.h"

namespace powerlearn {
namespace {

Matrix GaussianSamples(size_t n, size_t d, double sigma, uint64_t seed) {
  Rng rng(seed);
  Matrix m(n, d);
  for (double& v : m.data()) v = sigma * rng.Normal();
  return m;
}

TEST(ReconLowerBoundTest, Examples) {
  EXPECT_NEAR(ReconLowerBound(2, 1.0, 2.0).value, 4.0 / 3.0, 1e-15);
  EXPECT_EQ(ReconLowerBound(1, 0.0, 1.0).value, 1.0);
  EXPECT_NEAR(ReconLowerBound(2, 2.0, 2.0).value, 0.6666667, 1e-7);
  EXPECT_FALSE(ReconLowerBound(2, 1.0, 2.0).unbounded);
}

TEST(ReconLowerBoundTest, DegenerateIsUnbounded) {
  ReconBound b = ReconLowerBound(2, 0.0, 0.0);
  EXPECT_TRUE(b.unbounded);
  EXPECT_TRUE(std::isinf(b.value));
  EXPECT_TRUE(ReconLowerBound(2, 1.0, 0.0).unbounded);
}

TEST(ReconLowerBoundTest, StrictlyDecreasing) {
  Rng rng(4);
  for (int trial = 0; trial < 1000; ++trial) {
    const size_t d = 1 + rng.Below(20);
    const double eps = rng.Uniform(0.0, 5.0);
    const double tr = rng.Uniform(0.01, 10.0);
    const double base = ReconLowerBound(d, eps, tr).value;
    EXPECT_LT(ReconLowerBound(d, eps + rng.Uniform(0.01, 1.0), tr).value, base);
    EXPECT_LT(ReconLowerBound(d, eps, tr + rng.Uniform(0.01, 1.0)).value, base);
    ReconBoundInputs in{d, eps, tr, 100, 0.5, 0.0};
    const double c0 = EmpiricalReconBound(in)->value;
    in.c1 = rng.Uniform(0.01, 1.0);
    const double c1 = EmpiricalReconBound(in)->value;
    EXPECT_LT(c1, c0);
    in.c1 *= 1.5;
    EXPECT_LT(EmpiricalReconBound(in)->value, c1);
  }
}

TEST(EmpiricalReconBoundTest, Examples) {
  ReconBoundInputs in{2, 1.0, 2.0, 1000, 0.5, 0.0};
  EXPECT_EQ(EmpiricalReconBound(in)->value, ReconLowerBound(2, 1.0, 2.0).value);
  in.c1 = 1.0;
  EXPECT_NEAR(EmpiricalReconBound(in)->value, 1.305483, 1e-6);
  in.n = 1000000000000;
  EXPECT_NEAR(EmpiricalReconBound(in)->value, 4.0 / 3.0, 1e-8);
}

TEST(EmpiricalReconBoundTest, HighDimensionalInflationStaysFinite) {
  ReconBoundInputs in{104, 2.0, 50.0, 36178, 0.9, 1e-20};
  absl::StatusOr<ReconBound> b = EmpiricalReconBound(in);
  ASSERT_TRUE(b.ok());
  EXPECT_TRUE(std::isfinite(b->value));
  EXPECT_LE(b->value, ReconLowerBound(104, 2.0, 50.0).value);
}

TEST(EmpiricalReconBoundTest, RejectsBadInputs) {
  EXPECT_FALSE(EmpiricalReconBound({2, 1.0, 2.0, 0, 0.5, 1.0}).ok());
  EXPECT_FALSE(EmpiricalReconBound({2, 1.0, 2.0, 10, 0.0, 1.0}).ok());
  EXPECT_FALSE(EmpiricalReconBound({2, 1.0, -2.0, 10, 0.5, 1.0}).ok());
  EXPECT_FALSE(EmpiricalReconBound({0, 1.0, 2.0, 10, 0.5, 1.0}).ok());
}

TEST(EstimateC1Test, ExactScoreGivesZero) {
  // A single reference point at the origin with h = 1 has the exact
  // N(0, 1) score, so the estimate vanishes.
  DensityModel m = *DensityModel::Create(Matrix(1, 1), 1.0);
  Matrix held = GaussianSamples(50, 1, 1.0, 3);
  const Vector mean = {0.0};
  EXPECT_NEAR(*EstimateC1(m, held, mean, 1.0), 0.0, 1e-12);
}

TEST(EstimateC1Test, MatchesDefinition) {
  Matrix ref = GaussianSamples(500, 2, 1.0, 5);
  DensityModel m = *DensityModel::Create(ref, 0.0);
  Matrix held = GaussianSamples(300, 2, 1.0, 6);
  const Vector mean = {0.0, 0.0};
  const double c1 = *EstimateC1(m, held, mean, 1.0);
  double mse = 0.0;
  for (size_t i = 0; i < held.rows(); ++i) {
    Vector s = *m.Score(held.row(i));
    for (size_t j = 0; j < 2; ++j) {
      const double e = s[j] + held(i, j);
      mse += e * e;
    }
  }
  mse /= 300.0;
  const double h = m.bandwidth();
  EXPECT_NEAR(c1 * c1 / (500.0 * std::pow(h, 6.0)), mse, 1e-10 * mse);
  EXPECT_GT(c1, 0.0);
}

TEST(EstimateC1Test, GaussianHelperIsDeterministic) {
  EXPECT_EQ(*EstimateC1Gaussian(3, 400, 0.0, 100, 9),
            *EstimateC1Gaussian(3, 400, 0.0, 100, 9));
  EXPECT_FALSE(EstimateC1Gaussian(0, 400, 0.0, 100, 9).ok());
}

TEST(CheckLemmasTest, IdentityDeterministicAndScore) {
  DensityModel m = *DensityModel::Create(GaussianSamples(20000, 2, 1.0, 11), 0.0);
  LemmaDiagnostics diag = *CheckLemmas(m, 20000, 11);
  EXPECT_EQ(diag.identity_trace_cov, 2.0);
  EXPECT_NEAR(diag.identity_sq_dev, 2.0, 3.0 * diag.identity_std_error);
  EXPECT_TRUE(diag.identity_ok);
  EXPECT_EQ(diag.deterministic_sq_dev, 0.0);
  EXPECT_EQ(diag.deterministic_trace_cov, 0.0);
  EXPECT_TRUE(diag.deterministic_ok);
  EXPECT_LT(diag.score_mean_norm, 3.0 * diag.score_std_error)
      << diag.score_mean_norm << " vs se " << diag.score_std_error;
  EXPECT_TRUE(diag.ok());
}

TEST(CheckLemmasTest, RejectsTinySampleCount) {
  DensityModel m = *DensityModel::Create(GaussianSamples(10, 2, 1.0, 1), 0.0);
  EXPECT_FALSE(CheckLemmas(m, 1, 1).ok());
}

TEST(FisherCrossCheckTest, GaussianTraceWithinTwentyPercent) {
  for (double sigma : {1.0, 2.0}) {
    Matrix s = GaussianSamples(3000, 2, sigma, 17);
    DensityModel m = *DensityModel::Create(s, 0.0);
    const double expected = 2.0 / (sigma * sigma);
    EXPECT_NEAR(*FisherTrace(m, s), expected, 0.2 * expected) << sigma;
  }
}

TEST(ReconReportTest, JsonFields) {
  ReconReport r = *MakeReconReport({2, 1.0, 2.0, 1000, 0.5, 1.0});
  nlohmann::json j = nlohmann::json::parse(r.ToJson());
  for (const char* key : {"d", "eps", "fisher_trace", "c1", "n", "h",
                          "bound_exact", "bound_empirical"}) {
    EXPECT_TRUE(j.contains(key)) << key;
  }
  EXPECT_NEAR(j["bound_exact"].get<double>(), 4.0 / 3.0, 1e-12);
  EXPECT_NEAR(j["bound_empirical"].get<double>(), 1.305483, 1e-6);
  ReconReport u = *MakeReconReport({2, 0.0, 0.0, 1000, 0.5, 0.0});
  EXPECT_TRUE(nlohmann::json::parse(u.ToJson())["bound_exact"].is_null());
}

}  // namespace
}  // namespace powerlearn
