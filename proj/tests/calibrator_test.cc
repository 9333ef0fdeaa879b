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


#include "powerlearn/calibrator.h"

#include <cmath>

#include "gmock/gmock.h"
#include "gtest/gtest.h"
#include "json.hpp"
#include "powerlearn/synthetic.h"
#include "powerlearn/trainer.h"

namespace powerlearn {
namespace {

using ::testing::DoubleNear;

TEST(EpsilonPrimeTest, ZeroHalfwidthIsPrivacyLoss) {
  Matrix samples = *Matrix::FromData(3, 2, {0.0, 0.0, 1.0, -0.5, 0.3, 0.8});
  DensityModel dm = *DensityModel::Create(samples, 0.7);
  Rng rng(3);
  PrivatizerParams p = MakeLinearPower(2, 2, rng);
  const Vector x = {0.2, 0.1};
  DensityEval ev = *dm.Evaluate(x);
  Vector jac = *LogdetGradX(p, x);
  EpsilonPrime ep = *EpsilonPrimeFromDensity(ev.grad, ev.fhat, 0.0, jac);
  const double lp = *PrivacyLoss(p, dm, x);
  EXPECT_NEAR(ep.lower, lp, 1e-14);
  EXPECT_NEAR(ep.upper, lp, 1e-14);
  EXPECT_NEAR(ep.eps_prime, lp, 1e-14);
  EXPECT_FALSE(ep.clamped);
}

TEST(EpsilonPrimeTest, WorkedOneDimensionalValues) {
  const Vector grad = {-0.1}, jac = {0.0};
  EpsilonPrime ep = *EpsilonPrimeFromDensity(grad, 0.4, 0.0380113, jac);
  EXPECT_NEAR(ep.lower, 0.2762517, 1e-6);
  EXPECT_NEAR(ep.upper, 0.2283046, 1e-6);
  EXPECT_NEAR(ep.eps_prime, 0.2762517, 1e-6);
}

TEST(EpsilonPrimeTest, CollapsedLowerDenominatorIsClamped) {
  const Vector grad = {-0.1}, jac = {0.0};
  for (double hw : {0.4, 0.5, 3.0}) {
    EpsilonPrime ep = *EpsilonPrimeFromDensity(grad, 0.4, hw, jac);
    EXPECT_TRUE(ep.clamped) << hw;
    EXPECT_TRUE(std::isfinite(ep.eps_prime)) << hw;
    EXPECT_NEAR(ep.lower, 0.25 / kDenominatorFloor, 1e-3);
  }
}

TEST(EpsilonPrimeTest, RejectsNonPositiveDensity) {
  const Vector grad = {-0.1}, jac = {0.0};
  EXPECT_FALSE(EpsilonPrimeFromDensity(grad, 0.0, 0.1, jac).ok());
  EXPECT_FALSE(EpsilonPrimeFromDensity(grad, 0.4, -0.1, jac).ok());
}

TEST(EpsilonPrimeTest, BracketsPrivacyLossOnEveryRow) {
  SyntheticTable t = TwoGaussian2d(300, 12);
  TabularDataset ds = *EncodeTable(t.table, t.spec, 12);
  Matrix x = SelectRows(ds.x, ds.train);
  DensityModel dm = *DensityModel::Create(x, 0.0);
  Rng rng(12);
  PrivatizerParams p = MakeLinearPower(2, 2, rng, 0.3);
  for (size_t i = 0; i < x.rows(); ++i) {
    absl::StatusOr<EpsilonPrime> ep = ComputeEpsilonPrime(p, dm, x.row(i));
    ASSERT_TRUE(ep.ok());
    EXPECT_GE(ep->eps_prime, *PrivacyLoss(p, dm, x.row(i)) - 1e-12) << i;
  }
}

TEST(EpsilonFinalTest, WorkedAddOn) {
  EXPECT_NEAR(EpsilonAddOn(1, 1000, 0.3, std::log(0.4), 0.05), 0.0475145,
              1e-6);
  EXPECT_NEAR(EpsilonFinal(0.2762517, 1, 1000, 0.3, std::log(0.4), 0.05),
              0.2762517 + 0.0475145, 1e-6);
}

TEST(EpsilonFinalTest, Limits) {
  const double lf = std::log(0.4);
  EXPECT_EQ(EpsilonFinal(0.3, 1, 1000, 0.3, lf, 1.0), 0.3);
  EXPECT_LT(EpsilonAddOn(1, 1000, 0.3, lf, 0.999), 1e-3);
  EXPECT_LT(EpsilonAddOn(1, 1000000000000, 0.3, lf, 0.05), 1e-5);
}

TEST(EpsilonFinalTest, NonIncreasingInSampleSizeAndDensity) {
  Rng rng(21);
  for (int trial = 0; trial < 1000; ++trial) {
    const size_t d = 1 + rng.Below(10);
    const double h = rng.Uniform(0.05, 2.0);
    const double lf = rng.Uniform(-30.0, 1.0);
    const size_t n = 1 + rng.Below(100000);
    const double base = EpsilonFinal(0.5, d, n, h, lf, 0.05);
    EXPECT_GE(base, 0.5);
    EXPECT_LE(EpsilonFinal(0.5, d, n + 1 + rng.Below(1000), h, lf, 0.05), base);
    EXPECT_LE(EpsilonFinal(0.5, d, n, h, lf + rng.Uniform(0.0, 3.0), 0.05),
              base);
  }
}

TEST(EpsilonFinalTest, MatchesRecordPath) {
  Matrix samples = *Matrix::FromData(4, 1, {0.0, 0.5, -0.4, 1.2});
  DensityModel dm = *DensityModel::Create(samples, 0.3);
  PrivatizerParams p = MakeIdentity(1);
  const Vector x = {0.1};
  const double f = *ComputeEpsilonFinal(p, dm, x);
  std::vector<CalibrationRecord> recs =
      *Calibrate(p, dm, *Matrix::FromData(1, 1, {0.1}));
  EXPECT_DOUBLE_EQ(recs[0].eps_final, f);
  EXPECT_GE(recs[0].eps_final, recs[0].eps_prime);
  EXPECT_GE(recs[0].eps_prime, 0.0);
}

TEST(ToDpTest, Examples) {
  DpGuarantee g = *ToDp(2.0, 0.5, 0.05);
  EXPECT_EQ(g.eps_dp, 1.0);
  EXPECT_EQ(g.delta, 0.05);
  g = *ToDp(0.7, 1.0, 0.1);
  EXPECT_EQ(g.eps_dp, 0.7);
  EXPECT_EQ(g.delta, 0.1);
  g = *ToDp(0.0, 3.0, 0.05);
  EXPECT_EQ(g.eps_dp, 0.0);
  EXPECT_FALSE(ToDp(1.0, 0.0, 0.05).ok());
  EXPECT_FALSE(ToDp(1.0, 1.0, 1.0).ok());
}

std::vector<CalibrationRecord> Records(std::initializer_list<double> eps) {
  std::vector<CalibrationRecord> out;
  size_t i = 0;
  for (double e : eps) {
    CalibrationRecord r;
    r.index = i++;
    r.eps_prime = e;
    r.eps_final = e;
    out.push_back(r);
  }
  return out;
}

TEST(FilterReleaseTest, AllBelowTarget) {
  auto recs = Records({0.1, 0.2, 0.3});
  ReleaseDecision d = FilterRelease(recs, 1.0);
  EXPECT_THAT(d.released, ::testing::ElementsAre(0, 1, 2));
  EXPECT_FALSE(d.report.empty_release);
  EXPECT_EQ(d.report.dataset_eps, 0.3);
  for (const auto& r : recs) EXPECT_TRUE(r.released);
}

TEST(FilterReleaseTest, AllAboveTargetFlagsEmpty) {
  auto recs = Records({1.1, 2.0, 9.0});
  ReleaseDecision d = FilterRelease(recs, 1.0);
  EXPECT_TRUE(d.released.empty());
  EXPECT_TRUE(d.report.empty_release);
  EXPECT_EQ(d.report.released_count, 0u);
  EXPECT_EQ(d.report.dataset_eps, 0.0);
}

TEST(FilterReleaseTest, BoundaryIsInclusiveAndUnprivatizableNeverReleased) {
  auto recs = Records({1.0, 0.5});
  recs[1].privatizable = false;
  ReleaseDecision d = FilterRelease(recs, 1.0);
  EXPECT_THAT(d.released, ::testing::ElementsAre(0));
  EXPECT_EQ(d.report.unprivatizable_count, 1u);
}

TEST(FilterReleaseTest, HistogramBins) {
  auto recs = Records({0.0, 0.1, 0.25, 0.3, 100.0});
  ReleaseDecision d = FilterRelease(recs, 0.26);
  ASSERT_EQ(d.report.bin_edges.size(), 41u);
  EXPECT_EQ(d.report.bin_edges[4], 1.0);
  EXPECT_EQ(d.report.counts[0], 2u);
  EXPECT_EQ(d.report.counts[1], 2u);
  EXPECT_EQ(d.report.counts[39], 1u);
  EXPECT_EQ(d.report.released_counts[0], 2u);
  EXPECT_EQ(d.report.released_counts[1], 1u);
}

TEST(FilterReleaseTest, ReportJsonFields) {
  auto recs = Records({0.1, 2.0});
  recs[0].clamped = true;
  ReleaseDecision d = FilterRelease(recs, 1.0, 0.5);
  nlohmann::json j = nlohmann::json::parse(d.report.ToJson());
  for (const char* key : {"bins", "counts", "alpha", "eps_target",
                          "released_count", "clamp_count"}) {
    EXPECT_TRUE(j.contains(key)) << key;
  }
  EXPECT_EQ(j["released_count"], 1);
  EXPECT_EQ(j["clamp_count"], 1);
  EXPECT_EQ(j["dp"]["eps_dp"], 0.05);
}

TEST(CalibrationCsvTest, Columns) {
  auto recs = Records({0.5});
  recs[0].released = true;
  recs[0].fhat = 0.25;
  EXPECT_EQ(CalibrationCsv(recs),
            "index,eps_prime,eps_final,fhat,halfwidth,released\n"
            "0,0.5,0.5,0.25,0,1\n");
}

TEST(CalibrateTest, SingularJacobianRowsAreUnprivatizable) {
  Matrix zero(3, 3);
  PrivatizerParams p = MakeConstantH(zero, 1);
  Matrix samples = *Matrix::FromData(2, 3, {0.0, 0.1, 0.2, 1.0, 0.0, -1.0});
  DensityModel dm = *DensityModel::Create(samples, 0.5);
  std::vector<CalibrationRecord> recs = *Calibrate(p, dm, samples);
  ASSERT_EQ(recs.size(), 2u);
  EXPECT_FALSE(recs[0].privatizable);
  EXPECT_TRUE(std::isinf(recs[0].eps_final));
  ReleaseDecision d = FilterRelease(recs, 1e9);
  EXPECT_TRUE(d.report.empty_release);
}

TEST(CalibrateTest, HighDimensionalDensityStaysFinite) {
  SyntheticTable t = GaussianNd(400, 60, 1.0, 5);
  TabularDataset ds = *EncodeTable(t.table, t.spec, 5);
  Matrix x = SelectRows(ds.x, ds.train);
  DensityModel dm = *DensityModel::Create(x, 0.0);
  std::vector<CalibrationRecord> recs =
      *Calibrate(MakeIdentity(60), dm, x, ds.train);
  for (const CalibrationRecord& r : recs) {
    EXPECT_TRUE(r.floored);
    EXPECT_TRUE(std::isfinite(r.eps_final));
    EXPECT_GE(r.eps_final, r.eps_prime);
  }
  EXPECT_EQ(recs[3].index, ds.train[3]);
}

struct RunOutputs {
  std::vector<CalibrationRecord> train, held_out;
  std::string report_json;
};

RunOutputs CalibratedRun(uint64_t seed) {
  SyntheticTable t = TwoGaussian2d(5000, seed);
  TabularDataset ds = *EncodeTable(t.table, t.spec, seed);
  TrainConfig cfg;
  cfg.seed = seed;
  cfg.steps = 300;
  cfg.power = 2;
  cfg.learning_rate = 3e-3;
  ClientModel m = *TrainClient(ds, cfg);
  Matrix xt = SelectRows(ds.x, ds.train);
  DensityModel dm = *DensityModel::Create(xt, 0.0);
  RunOutputs out;
  out.train = *Calibrate(m.privatizer, dm, xt, ds.train);
  out.held_out =
      *Calibrate(m.privatizer, dm, SelectRows(ds.x, ds.validation),
                 ds.validation);
  out.report_json = FilterRelease(out.train, 1.0).report.ToJson();
  return out;
}

TEST(CalibrateTest, HistogramReproducibleForSeed) {
  EXPECT_EQ(CalibratedRun(31).report_json, CalibratedRun(31).report_json);
}

TEST(CalibrateTest, TrainAndHeldOutEpsilonDistributionsAgree) {
  for (uint64_t seed : {31, 32, 33}) {
    RunOutputs run = CalibratedRun(seed);
    PrivacyReport tr = FilterRelease(run.train, 1.0).report;
    PrivacyReport ho = FilterRelease(run.held_out, 1.0).report;
    const double mean = HistogramMean(tr.counts, tr.bin_edges);
    EXPECT_LT(HistogramWasserstein1(tr.counts, ho.counts, tr.bin_edges),
              0.2 * mean)
        << "seed " << seed << " mean " << mean;
  }
}

TEST(FilterReleaseTest, ReleasedCountMonotoneInTarget) {
  RunOutputs run = CalibratedRun(33);
  std::vector<size_t> counts;
  for (double target : {0.5, 1.0, 2.0}) {
    ReleaseDecision d = FilterRelease(run.train, target);
    size_t recount = 0;
    for (const auto& r : run.train) {
      if (r.privatizable && r.eps_final <= target) ++recount;
    }
    EXPECT_EQ(d.report.released_count, recount);
    counts.push_back(recount);
  }
  EXPECT_LE(counts[0], counts[1]);
  EXPECT_LE(counts[1], counts[2]);
  EXPECT_LT(counts[0], counts[2]);
}

TEST(Wasserstein1Test, HistogramForm) {
  const std::vector<double> edges = {0.0, 1.0, 2.0, 3.0};
  const std::vector<size_t> a = {2, 0, 0}, b = {0, 0, 5}, c = {1, 1, 0};
  EXPECT_DOUBLE_EQ(HistogramWasserstein1(a, b, edges), 2.0);
  EXPECT_DOUBLE_EQ(HistogramWasserstein1(a, c, edges), 0.5);
  EXPECT_DOUBLE_EQ(HistogramWasserstein1(c, c, edges), 0.0);
  EXPECT_DOUBLE_EQ(HistogramMean(c, edges), 1.0);
  const Vector sa = {0.5, 0.5}, sc = {0.5, 1.5};
  EXPECT_DOUBLE_EQ(HistogramWasserstein1(a, c, edges), Wasserstein1(sa, sc));
}

TEST(Wasserstein1Test, Basics) {
  const Vector a = {0.0}, b = {1.0};
  EXPECT_DOUBLE_EQ(Wasserstein1(a, b), 1.0);
  const Vector c = {0.0, 1.0, 3.0}, shifted = {0.5, 1.5, 3.5};
  EXPECT_DOUBLE_EQ(Wasserstein1(c, c), 0.0);
  EXPECT_DOUBLE_EQ(Wasserstein1(c, shifted), 0.5);
  const Vector e = {0.0, 2.0};
  EXPECT_DOUBLE_EQ(Wasserstein1(a, e), 1.0);
}

}  // namespace
}  // namespace powerlearn
