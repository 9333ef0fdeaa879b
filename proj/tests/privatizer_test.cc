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

#include "powerlearn/privatizer.h"

#include <cmath>
#include <numbers>

#include "gmock/gmock.h"
#include "gtest/gtest.h"

namespace powerlearn {
namespace {

Vector RandomVector(size_t d, Rng& rng, double scale = 1.0) {
  Vector v(d);
  for (double& x : v) x = rng.Normal(0.0, scale);
  return v;
}

// A random privatizer with d <= 4 for gradient checks.
PrivatizerParams RandomPrivatizer(Rng& rng, size_t d, bool tanh_variant) {
  if (tanh_variant) {
    PrivatizerParams p = MakeTwoLayerTanh(d, d + 1 + rng.Below(3), rng);
    for (double& b : p.b2) b = rng.Normal(0.0, 0.3);
    return p;
  }
  const int power = 1 + static_cast<int>(rng.Below(3));
  PrivatizerParams p = MakeLinearPower(d, power, rng, 0.5);
  for (DenseLayer& l : p.net.layers)
    for (double& b : l.bias) b = rng.Normal(0.0, 0.1);
  return p;
}

TEST(PrivatizeTest, IdentityMap) {
  PrivatizerParams p = MakeIdentity(3);
  PrivatizedSample s = *Privatize(p, Vector{0.5, -1.0, 2.0});
  EXPECT_THAT(s.z, ::testing::ElementsAre(0.5, -1.0, 2.0));
  EXPECT_EQ(s.logdet_sum, 0.0);
  EXPECT_THAT(s.logdet_grad_x, ::testing::Each(0.0));
}

TEST(PrivatizeTest, ConstantTwoIdentityCubed) {
  Matrix h = Matrix::Identity(2);
  h(0, 0) = h(1, 1) = 2.0;
  PrivatizerParams p = MakeConstantH(h, 3);
  PrivatizedSample s = *Privatize(p, Vector{0.25, -1.5});
  EXPECT_DOUBLE_EQ(s.z[0], 2.0);
  EXPECT_DOUBLE_EQ(s.z[1], -12.0);
  EXPECT_NEAR(s.logdet_sum, 4.158883, 1e-6);
  EXPECT_DOUBLE_EQ(s.logdet_sum, 3 * std::log(4.0));
}

TEST(PrivatizeTest, TwoLayerTanhMatchesStraightLineOracle) {
  Rng rng(1);
  PrivatizerParams p = MakeTwoLayerTanh(2, 3, rng);
  p.b2 = {0.1, -0.2};
  PrivatizedSample s = *Privatize(p, Vector{0.5, -0.5});
  // tests/golden/tanh_oracle.py
  EXPECT_NEAR(s.z[0], 0.18225494629608957, 1e-14);
  EXPECT_NEAR(s.z[1], 0.07876765651173388, 1e-14);
  EXPECT_NEAR(s.logdet_sum, -2.888886739644424, 1e-12);
  EXPECT_NEAR(s.logdet_grad_x[0], -0.02017711197958142, 1e-14);
  EXPECT_NEAR(s.logdet_grad_x[1], 0.12917256958107665, 1e-14);
}

TEST(PrivatizeTest, FrozenJacobianMatchesSlogdet) {
  Matrix h = *Matrix::FromData(3, 3, {1.5, 0.25, -0.5,    //
                                      0.125, 2.0, 0.75,   //
                                      -1.0, 0.5, 1.25});
  PrivatizerParams p = MakeConstantH(h, 1);
  PrivatizedSample s = *Privatize(p, Vector{0.1, 0.2, 0.3});
  EXPECT_EQ(s.logdet_sum, Slogdet(h)->logabs);
}

TEST(PrivatizeTest, DimensionMismatch) {
  EXPECT_FALSE(Privatize(MakeIdentity(2), Vector{1.0}).ok());
  EXPECT_FALSE(Privatize(MakeIdentity(2), Vector{1.0, NAN}).ok());
}

TEST(PrivatizeTest, SingularHIsJittered) {
  PrivatizerParams p = MakeConstantH(Matrix(1, 1), 1);
  PrivatizedSample s = *Privatize(p, Vector{3.0});
  EXPECT_TRUE(s.jittered);
  EXPECT_DOUBLE_EQ(s.z[0], 3e-4);
}

TEST(PrivatizeTest, SingularBeyondJitterIsUnprivatizable) {
  PrivatizerParams p = MakeConstantH(Matrix(3, 3), 1);
  absl::StatusOr<PrivatizedSample> s = Privatize(p, Vector{1.0, 2.0, 3.0});
  ASSERT_FALSE(s.ok());
  EXPECT_TRUE(IsUnprivatizable(s.status()));
  absl::StatusOr<PrivatizedRows> rows =
      PrivatizeRows(p, *Matrix::FromData(2, 3, {1, 2, 3, 4, 5, 6}));
  ASSERT_TRUE(rows.ok());
  EXPECT_EQ(rows->failures, 2u);
  EXPECT_THAT(rows->ok, ::testing::Each(0));
}

TEST(LogdetGradTest, ConstantHHasZeroGradient) {
  Rng rng(3);
  Matrix h = Matrix::Identity(3);
  for (double& v : h.data()) v += rng.Normal(0.0, 0.2);
  PrivatizerParams p = MakeConstantH(h, 2);
  EXPECT_THAT(*LogdetGradX(p, Vector{1.0, -2.0, 0.5}), ::testing::Each(0.0));
}

TEST(LogdetGradTest, TanhAtZeroPreactivation) {
  Rng rng(4);
  PrivatizerParams p = MakeTwoLayerTanh(3, 5, rng);
  const Vector x = {0.3, -0.7, 1.1};
  const Vector bx = MatVec(MatMul(p.w2, p.w1), x);
  for (size_t i = 0; i < 3; ++i) p.b2[i] = -bx[i];
  for (double g : *LogdetGradX(p, x)) EXPECT_NEAR(g, 0.0, 1e-15);
}

TEST(LogdetGradTest, MatchesFiniteDifferences) {
  Rng rng(10);
  for (int trial = 0; trial < 100; ++trial) {
    const size_t d = 1 + rng.Below(4);
    const bool tanh_variant = trial % 2 == 1;
    PrivatizerParams p = RandomPrivatizer(rng, d, tanh_variant);
    const Vector x = RandomVector(d, rng);
    absl::StatusOr<Vector> fd = GradOracle(
        [&](std::span<const double> q) { return Privatize(p, q)->logdet_sum; },
        x);
    ASSERT_TRUE(fd.ok()) << fd.status();
    EXPECT_LT(MaxRelativeError(*LogdetGradX(p, x), *fd), 1e-4)
        << "trial " << trial << " " << VariantName(p.variant);
  }
}

TEST(PrivacyLossTest, IdentityIsScoreNorm) {
  Rng rng(5);
  Matrix ref(20, 2);
  for (double& v : ref.data()) v = rng.Normal();
  DensityModel dm = *DensityModel::Create(ref, 0.7);
  const Vector x = {0.4, -0.2};
  EXPECT_DOUBLE_EQ(*PrivacyLoss(MakeIdentity(2), dm, x), Norm2(*dm.Score(x)));
  Matrix h = Matrix::Identity(2);
  h(0, 0) = h(1, 1) = 3.0;
  EXPECT_DOUBLE_EQ(*PrivacyLoss(MakeConstantH(h, 2), dm, x),
                   Norm2(*dm.Score(x)));
}

TEST(PrivacyLossTest, SingleSampleKde) {
  DensityModel dm = *DensityModel::Create(*Matrix::FromData(1, 1, {1.2}), 1.0);
  EXPECT_NEAR(*PrivacyLoss(MakeIdentity(1), dm, Vector{1.5}), 0.3, 1e-12);
}

// Scalar objective L_P + <zbar, z> used to check the tape.
double TapeObjective(const PrivatizerParams& p, std::span<const double> x,
                     std::span<const double> score,
                     std::span<const double> zbar, double lp_weight) {
  absl::StatusOr<PrivatizerTape> t = PrivatizerTape::Record(p, x);
  if (!t.ok()) return NAN;
  return lp_weight * t->PrivacyLoss(score) + Dot(zbar, t->sample().z);
}

TEST(PrivatizerTapeTest, ParameterGradientsMatchFiniteDifferences) {
  Rng rng(20);
  for (int trial = 0; trial < 100; ++trial) {
    const size_t d = 1 + rng.Below(4);
    const bool tanh_variant = trial % 2 == 0;
    PrivatizerParams p = RandomPrivatizer(rng, d, tanh_variant);
    const Vector x = RandomVector(d, rng);
    const Vector score = RandomVector(d, rng, 2.0);
    const Vector zbar = RandomVector(d, rng);
    const double lp_weight = rng.Uniform(0.5, 2.0);

    absl::StatusOr<PrivatizerTape> tape = PrivatizerTape::Record(p, x);
    ASSERT_TRUE(tape.ok());
    Vector grad(p.ParameterCount(), 0.0);
    tape->Backward(score, lp_weight, zbar, grad);

    const Vector theta = p.Flatten();
    absl::StatusOr<Vector> fd = GradOracle(
        [&](std::span<const double> q) {
          PrivatizerParams pq = p;
          (void)pq.Unflatten(q);
          return TapeObjective(pq, x, score, zbar, lp_weight);
        },
        theta);
    ASSERT_TRUE(fd.ok()) << fd.status();
    EXPECT_LT(MaxRelativeError(grad, *fd), 1e-4)
        << "trial " << trial << " " << VariantName(p.variant) << " d=" << d
        << " p=" << p.power;
  }
}

TEST(PrivatizerTapeTest, PrivacyOnlyAndUtilityOnlyAdd) {
  Rng rng(21);
  PrivatizerParams p = RandomPrivatizer(rng, 3, false);
  const Vector x = RandomVector(3, rng), s = RandomVector(3, rng),
               zbar = RandomVector(3, rng);
  PrivatizerTape tape = *PrivatizerTape::Record(p, x);
  Vector both(p.ParameterCount(), 0.0), split(p.ParameterCount(), 0.0);
  tape.Backward(s, 1.0, zbar, both);
  tape.Backward(s, 1.0, {}, split);
  tape.Backward(s, 0.0, zbar, split);
  EXPECT_LT(MaxRelativeError(split, both), 1e-12);
}

TEST(TwoLayerBoundTest, GradientNormWithinTwoMSqrtHw) {
  Rng rng(30);
  int violations = 0;
  for (int cfg = 0; cfg < 1000; ++cfg) {
    const size_t d = 1 + rng.Below(4);
    const size_t hw = d + rng.Below(6);
    PrivatizerParams p = MakeTwoLayerTanh(d, hw, rng);
    for (double& w : p.w1.data()) w *= rng.Uniform(0.5, 5.0);
    for (double& w : p.w2.data()) w *= rng.Uniform(0.5, 5.0);
    for (double& b : p.b2) b = rng.Normal();
    ProjectWeightNorms(p);
    ASSERT_LE(FrobeniusNorm(p.w2), std::sqrt(double(d)) * (1 + 1e-12));
    const Vector x = RandomVector(d, rng, 2.0);
    absl::StatusOr<Vector> g = LogdetGradX(p, x);
    if (!g.ok()) continue;  // singular W2 W1: no density to bound
    if (Norm2(*g) > 2.0 * d * std::sqrt(double(hw))) ++violations;
  }
  EXPECT_EQ(violations, 0);
}

// Total variation between the histogram of z = A x, x ~ N(0, I), and the
// pushed-forward density f_X(A^{-1} z) / |det A|.
double ChangeOfVariablesTv(const Matrix& a, int samples, uint64_t seed) {
  const size_t d = a.rows();
  PrivatizerParams p = MakeConstantH(a, 1);
  Rng rng(seed);
  const int bins = d == 1 ? 80 : 40;
  const double lo = -8.0, hi = 8.0, w = (hi - lo) / bins;
  std::vector<double> hist(d == 1 ? bins : bins * bins, 0.0);
  int counted = 0;
  for (int i = 0; i < samples; ++i) {
    Vector z = Privatize(p, RandomVector(d, rng))->z;
    int idx = 0;
    bool in = true;
    for (size_t j = 0; j < d; ++j) {
      const int b = static_cast<int>(std::floor((z[j] - lo) / w));
      if (b < 0 || b >= bins) in = false;
      idx = idx * bins + b;
    }
    if (in) hist[idx] += 1.0;
    ++counted;
  }
  LuDecomposition lu = *LuDecomposition::Factor(a);
  const double absdet = std::exp(lu.LogDet().logabs);
  double tv = 0.0;
  for (size_t k = 0; k < hist.size(); ++k) {
    Vector c(d);
    size_t rem = k;
    for (size_t j = d; j-- > 0;) {
      c[j] = lo + (rem % bins + 0.5) * w;
      rem /= bins;
    }
    // Midpoint rule on a 4^d sub-grid of the bin.
    double mass = 0.0;
    const int sub = 4;
    const int cells = d == 1 ? sub : sub * sub;
    for (int s = 0; s < cells; ++s) {
      Vector zz = c;
      zz[0] += ((s % sub) + 0.5) / sub * w - 0.5 * w;
      if (d == 2) zz[1] += ((s / sub) + 0.5) / sub * w - 0.5 * w;
      const Vector xx = lu.Solve(zz);
      const double fx = std::exp(-0.5 * Dot(xx, xx)) /
                        std::pow(2.0 * std::numbers::pi, 0.5 * d);
      mass += fx / absdet * std::pow(w / sub, d);
    }
    tv += std::abs(hist[k] / counted - mass);
  }
  return 0.5 * tv;
}

TEST(ChangeOfVariablesTest, OneDimension) {
  EXPECT_LT(ChangeOfVariablesTv(*Matrix::FromData(1, 1, {1.7}), 100000, 40),
            0.05);
}

TEST(ChangeOfVariablesTest, TwoDimensions) {
  Matrix a = *Matrix::FromData(2, 2, {1.2, 0.4, -0.3, 0.8});
  EXPECT_LT(ChangeOfVariablesTv(a, 100000, 41), 0.05);
}

TEST(FullJacobianTest, ConstantHAgreesWithFrozenConvention) {
  Matrix h = *Matrix::FromData(2, 2, {1.1, 0.2, -0.3, 0.9});
  PrivatizerParams p = MakeConstantH(h, 3);
  const Vector x = {0.3, 0.4};
  EXPECT_NEAR(*FullJacobianLogdet(p, x), Privatize(p, x)->logdet_sum, 1e-8);
  for (double g : *FullJacobianLogdetGrad(p, x)) EXPECT_NEAR(g, 0.0, 1e-5);
}

TEST(FullJacobianTest, LimitedToSmallDimensions) {
  EXPECT_FALSE(FullJacobianLogdet(MakeIdentity(5), Vector(5, 0.0)).ok());
}

TEST(SerializationTest, RoundTripsBothVariants) {
  Rng rng(50);
  for (bool tanh_variant : {false, true}) {
    PrivatizerParams p = RandomPrivatizer(rng, 3, tanh_variant);
    p.jitter = 3e-5;
    Bytes blob = SerializePrivatizer(p);
    absl::StatusOr<PrivatizerParams> q = DeserializePrivatizer(blob);
    ASSERT_TRUE(q.ok()) << q.status();
    EXPECT_EQ(q->variant, p.variant);
    EXPECT_EQ(q->power, p.power);
    EXPECT_EQ(q->jitter, p.jitter);
    EXPECT_EQ(q->Flatten(), p.Flatten());
    EXPECT_EQ(SerializePrivatizer(*q), blob);
  }
}

TEST(SerializationTest, RejectsCorruption) {
  Rng rng(51);
  Bytes blob = SerializePrivatizer(RandomPrivatizer(rng, 2, false));
  Bytes bad = blob;
  bad[bad.size() - 10] ^= 0x01;
  EXPECT_EQ(DeserializePrivatizer(bad).status().code(),
            absl::StatusCode::kDataLoss);
  bad = blob;
  bad[0] = 'X';
  EXPECT_FALSE(DeserializePrivatizer(bad).ok());
  EXPECT_FALSE(
      DeserializePrivatizer(std::span<const uint8_t>(blob).first(5)).ok());
}

}  // namespace
}  // namespace powerlearn
