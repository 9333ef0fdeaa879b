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

// A small fully connected network with hand-derived gradients.
//
// Besides the usual forward/backward pair this exposes a forward-mode tangent
// pass and the matching reverse-over-forward pass. The privatizer needs those
// to differentiate an input-gradient with respect to the weights.

#ifndef POWERLEARN_MLP_H_
#define POWERLEARN_MLP_H_

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "absl/status/status.h"
#include "absl/status/statusor.h"
#include "powerlearn/numkit.h"
#include "powerlearn/rng.h"

namespace powerlearn {

enum class Activation { kIdentity, kTanh, kRelu, kSoftmax };

std::string ActivationName(Activation a);
absl::StatusOr<Activation> ParseActivation(const std::string& name);

struct DenseLayer {
  Matrix weight;  // out x in
  Vector bias;    // out
  Activation activation = Activation::kIdentity;
};

struct MlpParams {
  std::vector<DenseLayer> layers;

  size_t input_size() const;
  size_t output_size() const;
  size_t ParameterCount() const;
  // Layer by layer: weight (row-major) then bias.
  Vector Flatten() const;
  absl::Status Unflatten(std::span<const double> flat);
  // Shapes compose, entries finite, softmax only on the last layer.
  absl::Status Validate() const;
};

// Layer sizes {in, h1, ..., out}. Weights are uniform in +-1/sqrt(fan_in),
// biases zero.
MlpParams MakeMlp(std::span<const size_t> sizes, Activation hidden,
                  Activation output, Rng& rng);

absl::StatusOr<Vector> MlpForward(const MlpParams& p, std::span<const double> x);

// Per-layer values kept for the backward passes. inputs[l] feeds layer l,
// pre[l] is its pre-activation and outputs() the network output.
struct MlpTrace {
  std::vector<Vector> inputs;
  std::vector<Vector> pre;
  Vector output;
};

MlpTrace MlpForwardTrace(const MlpParams& p, std::span<const double> x);

// Reverse pass. `grad_out` is dL/d(output); when the last layer is softmax it
// is taken to be dL/d(logits) instead (see SoftmaxCrossEntropy). Adds
// scale * dL/dtheta into `param_grad` (Flatten layout, may be empty to skip)
// and returns dL/dx.
Vector MlpBackward(const MlpParams& p, const MlpTrace& trace,
                   std::span<const double> grad_out,
                   std::span<double> param_grad, double scale = 1.0);

// Directional derivative of every pre-activation along input direction v.
// Returns per-layer tangents of the pre-activations; the tangent of the
// output is the last entry passed through the last activation's slope.
std::vector<Vector> MlpTangent(const MlpParams& p, const MlpTrace& trace,
                               std::span<const double> v);

// Reverse pass over the joint (primal, tangent) computation. Given adjoints
// of the network output (`out_adj`) and of the output tangent (`tan_adj`),
// adds scale * d/dtheta into `param_grad`. x and v are held fixed. Softmax
// output layers are not supported here.
void MlpBackwardWithTangent(const MlpParams& p, const MlpTrace& trace,
                            const std::vector<Vector>& tangent_pre,
                            std::span<const double> v,
                            std::span<const double> out_adj,
                            std::span<const double> tan_adj,
                            std::span<double> param_grad, double scale = 1.0);

// Output tangent corresponding to MlpTangent's pre-activation tangents.
Vector MlpOutputTangent(const MlpParams& p, const MlpTrace& trace,
                        const std::vector<Vector>& tangent_pre);

// Cross-entropy -log probs[label]; writes probs - onehot(label) into
// grad_logits.
double SoftmaxCrossEntropy(std::span<const double> probs, int label,
                           std::span<double> grad_logits);

// Index of the largest entry; ties resolve to the lowest index.
size_t ArgMax(std::span<const double> v);

// Shape string such as "2x4:tanh,4x4:identity" (in x out per layer), and the
// zero-weight network it describes.
std::string LayersToString(const MlpParams& net);
absl::StatusOr<MlpParams> LayersFromString(const std::string& s);

double ActivationValue(Activation a, double x);
double ActivationSlope(Activation a, double x);
double ActivationCurvature(Activation a, double x);

}  // namespace powerlearn

#endif  // POWERLEARN_MLP_H_
