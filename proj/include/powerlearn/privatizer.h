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

// The power mechanism.
//
// Linear-power: a network P_N maps x to d*d numbers, H(x) = I + reshape(P_N(x))
// (row-major) and z = H^p x. H is computed once from the input and reused for
// all p steps, so each step has Jacobian H and the summed log-determinant is
// p log|det H(x)|; its x-gradient flows through P_N.
//
// Two-layer-tanh: z = tanh(W2 W1 x + b2) with W1 (h_w x d), W2 (d x h_w).
// The log-determinant is sum_i log(1 - tanh^2 a_i) + log|det W2 W1| and its
// x-gradient has the closed form (W2 W1)^T xi with xi_i = -2 tanh(a_i).
//
// The privacy loss is L_P(x) = |score(x) - grad_x logdet_sum(x)|_2.

#ifndef POWERLEARN_PRIVATIZER_H_
#define POWERLEARN_PRIVATIZER_H_

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "absl/status/status.h"
#include "absl/status/statusor.h"
#include "powerlearn/bytes.h"
#include "powerlearn/density.h"
#include "powerlearn/mlp.h"
#include "powerlearn/numkit.h"
#include "powerlearn/rng.h"

namespace powerlearn {

enum class PrivatizerVariant { kLinearPower, kTwoLayerTanh };

std::string VariantName(PrivatizerVariant v);
absl::StatusOr<PrivatizerVariant> ParseVariant(const std::string& name);

// |det| below this triggers one jittered retry.
inline constexpr double kSingularDet = 1e-8;

struct PrivatizerParams {
  PrivatizerVariant variant = PrivatizerVariant::kLinearPower;
  int power = 1;
  double jitter = 1e-4;
  MlpParams net;  // linear-power only
  Matrix w1;      // two-layer-tanh only
  Matrix w2;
  Vector b2;

  size_t dim() const;
  size_t ParameterCount() const;
  // linear-power: net.Flatten(); two-layer-tanh: w1, w2 (row-major), b2.
  Vector Flatten() const;
  absl::Status Unflatten(std::span<const double> flat);
  absl::Status Validate() const;
};

// P_N with sizes d -> hidden... -> d*d, tanh hidden layers and a linear
// output. `output_scale` multiplies the initial output-layer weights.
PrivatizerParams MakeLinearPower(size_t d, std::span<const size_t> hidden,
                                 int power, Rng& rng,
                                 double output_scale = 1.0);
// Default architecture d -> 2d -> d*d.
PrivatizerParams MakeLinearPower(size_t d, int power, Rng& rng,
                                 double output_scale = 1.0);
PrivatizerParams MakeTwoLayerTanh(size_t d, size_t hw, Rng& rng);
// P_N with zero weights whose output makes H equal `h` for every input.
PrivatizerParams MakeConstantH(const Matrix& h, int power);
PrivatizerParams MakeIdentity(size_t d);

struct PrivatizedSample {
  Vector x;
  Vector z;
  double logdet_sum = 0.0;
  Vector logdet_grad_x;
  int det_sign = 1;
  bool jittered = false;
};

// kFailedPrecondition when the Jacobian stays singular after jitter.
absl::StatusOr<PrivatizedSample> Privatize(const PrivatizerParams& p,
                                           std::span<const double> x);
absl::StatusOr<Vector> LogdetGradX(const PrivatizerParams& p,
                                   std::span<const double> x);
absl::StatusOr<double> PrivacyLoss(const PrivatizerParams& p,
                                   const DensityModel& density,
                                   std::span<const double> x);
// Same with a precomputed score vector.
absl::StatusOr<double> PrivacyLossWithScore(const PrivatizerParams& p,
                                            std::span<const double> score,
                                            std::span<const double> x);

bool IsUnprivatizable(const absl::Status& s);

// Privatizes every row; rows that cannot be privatized are left zero and
// flagged false in `ok`.
struct PrivatizedRows {
  Matrix z;
  std::vector<uint8_t> ok;
  Vector logdet_sum;
  size_t failures = 0;
};
absl::StatusOr<PrivatizedRows> PrivatizeRows(const PrivatizerParams& p,
                                             const Matrix& x);

// Forward record of one sample for training. Backward adds
//   lp_weight * dL_P/dtheta + (dz/dtheta)^T z_adjoint
// into `grad` (Flatten layout). z_adjoint may be empty.
class PrivatizerTape {
 public:
  static absl::StatusOr<PrivatizerTape> Record(const PrivatizerParams& p,
                                               std::span<const double> x);

  const PrivatizedSample& sample() const { return sample_; }
  double PrivacyLoss(std::span<const double> score) const;
  void Backward(std::span<const double> score, double lp_weight,
                std::span<const double> z_adjoint,
                std::span<double> grad) const;

 private:
  PrivatizerTape(const PrivatizerParams& p) : params_(&p) {}

  const PrivatizerParams* params_;
  PrivatizedSample sample_;
  Matrix h_;       // H (linear-power, after jitter) or W2 W1 (tanh)
  Matrix h_inv_;   // H^{-1} (linear-power)
  MlpTrace trace_;
  Vector tanh_;    // tanh(a) (two-layer-tanh)
};

// Debug mode for d <= 4: log|det| of the Jacobian of the whole map x -> z by
// central differences, and its x-gradient by nested differences.
absl::StatusOr<double> FullJacobianLogdet(const PrivatizerParams& p,
                                          std::span<const double> x,
                                          double step = 1e-5);
absl::StatusOr<Vector> FullJacobianLogdetGrad(const PrivatizerParams& p,
                                              std::span<const double> x,
                                              double step = 1e-4);

// Rescales W1 to spectral norm <= sqrt(hw) and W2 to Frobenius norm <=
// sqrt(m) (two-layer-tanh); a no-op for linear-power.
void ProjectWeightNorms(PrivatizerParams& p);

// Versioned binary blob: "PLPRIV1\n", key=value header, blank line,
// little-endian f64 parameters, CRC32.
Bytes SerializePrivatizer(const PrivatizerParams& p);
absl::StatusOr<PrivatizerParams> DeserializePrivatizer(
    std::span<const uint8_t> bytes);

}  // namespace powerlearn

#endif  // POWERLEARN_PRIVATIZER_H_
