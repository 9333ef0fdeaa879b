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

// Client-side joint training of the privatizer P_N and the utility network
// U_N on L = mean(L_P) + lambda * mean(L_U), plus the step-size guidance of
// the two-layer smoothness analysis.

#ifndef POWERLEARN_TRAINER_H_
#define POWERLEARN_TRAINER_H_

#include <cstdint>
#include <string>
#include <vector>

#include "absl/status/statusor.h"
#include "powerlearn/dataio.h"
#include "powerlearn/density.h"
#include "powerlearn/mlp.h"
#include "powerlearn/privatizer.h"

namespace powerlearn {

enum class OptimizerKind { kSgd, kAdam };

std::string OptimizerName(OptimizerKind k);
absl::StatusOr<OptimizerKind> ParseOptimizer(const std::string& name);

struct TrainConfig {
  double lambda = 1.0;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  double learning_rate = 1e-3;
  size_t batch_size = 64;
  size_t steps = 300;
  uint64_t seed = 1;
  int power = 1;
  PrivatizerVariant variant = PrivatizerVariant::kLinearPower;
  std::vector<size_t> privatizer_hidden;  // empty: {2d}
  size_t tanh_width = 0;                  // h_w; 0: 2d
  std::vector<size_t> utility_hidden = {16};
  double bandwidth = 0.0;                 // <= 0: Scott's rule
  double alpha = 0.05;
  bool project_weights = false;
  double output_scale = 1.0;              // initial P_N output-layer scale

  absl::Status Validate(size_t n_train) const;
};

struct TrainRecord {
  size_t step = 0;
  double lp = 0.0;
  double lu = 0.0;
  double joint = 0.0;
  double grad_norm = 0.0;
  size_t skipped = 0;  // unprivatizable samples in the batch
};

struct TrainHistory {
  std::vector<TrainRecord> records;
  size_t skipped_samples = 0;  // unprivatizable samples left out of batches

  // step,lp,lu,joint,gradnorm
  std::string ToCsv() const;
};

class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double lr, size_t size);
  void Step(std::span<double> params, std::span<const double> grad);

 private:
  OptimizerKind kind_;
  double lr_;
  double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  size_t t_ = 0;
  Vector m_, v_;
};

// Mean batch losses and gradients (Flatten layouts).
struct JointEval {
  double lp = 0.0;
  double lu = 0.0;
  double joint = 0.0;
  Vector priv_grad;
  Vector util_grad;
  size_t skipped = 0;
};

// Loss and gradient of mean_b [L_P(x_b) + lambda * L_U(y_b, U(z_b))] over
// `rows` of x, with scores[r] the frozen density score of row r.
absl::StatusOr<JointEval> JointLossAndGradient(
    const PrivatizerParams& priv, const MlpParams& util, const Matrix& x,
    std::span<const int> y, const std::vector<Vector>& scores,
    std::span<const size_t> rows, double lambda);

struct OptimizerState {
  Optimizer priv;
  Optimizer util;
};

// One optimizer update. kAborted on a non-finite loss.
absl::StatusOr<TrainRecord> JointStep(PrivatizerParams& priv, MlpParams& util,
                                      OptimizerState& opt, const Matrix& x,
                                      std::span<const int> y,
                                      const std::vector<Vector>& scores,
                                      std::span<const size_t> rows,
                                      const TrainConfig& cfg);

struct ClientModel {
  PrivatizerParams privatizer;
  MlpParams utility;
  TrainHistory history;
};

// Initial parameters for `cfg` on d inputs and `classes` labels.
ClientModel InitClientModel(size_t d, size_t classes, const TrainConfig& cfg);

// Builds the frozen density from the training split (bandwidth and alpha
// from cfg) when `density` is null.
absl::StatusOr<ClientModel> TrainClient(const TabularDataset& ds,
                                        const TrainConfig& cfg,
                                        const DensityModel* density = nullptr);

// Scores of every row of x under the density, in parallel.
absl::StatusOr<std::vector<Vector>> ScoreRows(const DensityModel& density,
                                              const Matrix& x);

struct SmoothnessInputs {
  double m = 1.0;       // tanh layer width
  double hw = 1.0;      // first-layer width bound
  double classes = 2.0;
  double lambda = 0.0;
  double sigma2 = 0.0;  // gradient noise bound
  double steps = 1.0;   // T
  double gap = 1.0;     // L(theta_0) - L*
};

struct SmoothnessBound {
  double l = 0.0;
  double eta_max = 0.0;
};

// L = 4 m^2 h_w + lambda c h_w, eta_max = 1 / L.
SmoothnessBound ComputeSmoothnessBound(const SmoothnessInputs& s);

// gap / (eta (1 - L eta / 2) T) + L eta sigma^2 / (2 (1 - L eta / 2)).
// Requires eta < 1 / L.
absl::StatusOr<double> SgdRateBound(const SmoothnessInputs& s, double eta);

// `count` values spaced geometrically from lo to hi inclusive.
std::vector<double> LambdaGrid(double lo, double hi, size_t count);

struct LambdaSweepPoint {
  double lambda = 0.0;
  double final_lp = 0.0;
  double final_lu = 0.0;
};

absl::StatusOr<std::vector<LambdaSweepPoint>> LambdaSweep(
    const TabularDataset& ds, const TrainConfig& cfg,
    std::span<const double> lambdas);

}  // namespace powerlearn

#endif  // POWERLEARN_TRAINER_H_
