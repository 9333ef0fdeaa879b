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


// Reconstruction adversary: a decoder MLP from embeddings back to
// standardized features, fitted on public rows that the adversary
// privatizes itself through the released mechanism.
//
// This adversary is weaker than a full feature-space hijacking attack (it
// never steers the client's training), so a low leakage score here is
// necessary but not sufficient evidence of protection.

#ifndef POWERLEARN_ATTACK_H_
#define POWERLEARN_ATTACK_H_

#include <cstdint>
#include <string>
#include <vector>

#include "absl/status/statusor.h"
#include "powerlearn/dataio.h"
#include "powerlearn/mlp.h"
#include "powerlearn/numkit.h"
#include "powerlearn/privatizer.h"

namespace powerlearn {

struct AttackConfig {
  std::vector<size_t> hidden = {64};
  double learning_rate = 1e-3;
  size_t batch_size = 64;
  size_t steps = 2000;

  absl::Status Validate() const;
};

// Fits decoder(z) ~ x by mean squared error. Deterministic given seed.
absl::StatusOr<MlpParams> TrainDecoder(const Matrix& z, const Matrix& x,
                                       const AttackConfig& cfg, uint64_t seed);

struct Attacker {
  MlpParams decoder;
  size_t public_rows = 0;  // rows that could be privatized and used
};

// Privatizes `public_x` with `priv` (black box) and fits the decoder.
absl::StatusOr<Attacker> TrainAttacker(const Matrix& public_x,
                                       const PrivatizerParams& priv,
                                       const AttackConfig& cfg, uint64_t seed);

struct AttackReport {
  // Fraction of rows whose every categorical group is recovered by argmax;
  // NaN when the schema has no categorical groups.
  double categorical_accuracy = 0.0;
  size_t categorical_groups = 0;
  double mse = 0.0;        // mean over all n * d coordinates
  double sq_error = 0.0;   // mean over rows of the squared error norm
  double correlation = 0.0;  // Pearson over all coordinates
  size_t n = 0;

  std::string ToJson() const;
};

// Metrics for decoder outputs `pred` against true features `truth`.
absl::StatusOr<AttackReport> LeakageFromPredictions(const FeatureSchema& schema,
                                                    const Matrix& pred,
                                                    const Matrix& truth);

// Decodes `embeddings` (rows aligned with `private_x`) and scores them.
absl::StatusOr<AttackReport> LeakageMetrics(const MlpParams& decoder,
                                            const FeatureSchema& schema,
                                            const Matrix& private_x,
                                            const Matrix& embeddings);

}  // namespace powerlearn

#endif  // POWERLEARN_ATTACK_H_
