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


// Server-side learners fitted on nothing but a decoded release bundle:
// an MLP classifier, a bagged CART forest and gradient-boosted trees.
//
// Trees split on quantile bins of the training features (at most
// ServerConfig::max_bins per feature); a sample goes left when
// x[feature] <= threshold. Among equally good splits the lowest feature
// index and then the lowest threshold win.

#ifndef POWERLEARN_SERVERSIDE_H_
#define POWERLEARN_SERVERSIDE_H_

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "absl/status/statusor.h"
#include "powerlearn/bytes.h"
#include "powerlearn/mlp.h"
#include "powerlearn/numkit.h"
#include "powerlearn/protocol.h"

namespace powerlearn {

enum class ServerKind { kMlp, kForest, kGbt };

std::string ServerKindName(ServerKind k);
absl::StatusOr<ServerKind> ParseServerKind(const std::string& name);

struct ServerConfig {
  // mlp
  std::vector<size_t> mlp_hidden = {64, 64};
  double learning_rate = 1e-3;
  size_t batch_size = 128;
  size_t steps = 2000;
  // forest
  size_t trees = 50;
  size_t forest_depth = 12;
  size_t min_leaf = 1;
  // gbt
  size_t rounds = 100;
  size_t gbt_depth = 4;
  double shrinkage = 0.1;
  double l2 = 1.0;
  // both tree kinds
  size_t max_bins = 256;

  absl::Status Validate() const;
};

struct TreeNode {
  int64_t feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  int64_t left = -1;
  int64_t right = -1;
  Vector value;  // leaf: class distribution (forest) or raw scores (gbt)
};

struct Tree {
  std::vector<TreeNode> nodes;  // nodes[0] is the root

  const Vector& Leaf(std::span<const double> x) const;
  size_t Depth() const;
  // Children in range, every node reachable exactly once, no cycles.
  absl::Status Validate(size_t value_size) const;
};

struct ServerModel {
  ServerKind kind = ServerKind::kMlp;
  size_t dim = 0;
  size_t classes = 0;
  MlpParams mlp;
  std::vector<Tree> trees;  // gbt: round-major, one tree per score column
  Vector base_score;        // gbt initial raw scores
  bool constant = false;    // single-class training data
  int constant_class = 0;

  // Class probabilities (mlp, gbt) or vote fractions (forest).
  absl::StatusOr<Vector> Scores(std::span<const double> x) const;
  // Argmax of Scores; ties go to the lower class id.
  absl::StatusOr<int> Predict(std::span<const double> x) const;
};

struct EvalReport {
  double accuracy = 0.0;
  std::vector<size_t> class_counts;    // true labels per class
  std::vector<size_t> correct_counts;  // correct predictions per class
  size_t n_train = 0;
  size_t n_test = 0;

  std::string ToJson() const;
};

absl::StatusOr<EvalReport> Evaluate(const ServerModel& m, const Matrix& x,
                                    std::span<const int64_t> y);

// Fits directly on (x, y); labels must lie in [0, classes).
absl::StatusOr<ServerModel> FitServerModel(const Matrix& x,
                                           std::span<const int64_t> y,
                                           size_t classes, ServerKind kind,
                                           const ServerConfig& cfg,
                                           uint64_t seed);

struct ServerRun {
  ServerModel model;
  EvalReport train;
  EvalReport test;
  std::vector<size_t> train_rows;
  std::vector<size_t> test_rows;
  bool single_class = false;
};

// Re-splits the bundle 80/20 with `seed`, fits on the 80% and evaluates on
// both parts. Bundles with fewer than 5 rows are fitted and evaluated on all
// rows.
absl::StatusOr<ServerRun> TrainServer(const ReleaseBundle& bundle,
                                      ServerKind kind, const ServerConfig& cfg,
                                      uint64_t seed);

Bytes SerializeServerModel(const ServerModel& m);
absl::StatusOr<ServerModel> DeserializeServerModel(
    std::span<const uint8_t> bytes);

}  // namespace powerlearn

#endif  // POWERLEARN_SERVERSIDE_H_
