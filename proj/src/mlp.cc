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

#include "powerlearn/mlp.h"

#include <algorithm>
#include <cmath>

#include "absl/strings/numbers.h"
#include "absl/strings/str_format.h"
#include "absl/strings/str_join.h"
#include "absl/strings/str_split.h"

namespace powerlearn {

std::string ActivationName(Activation a) {
  switch (a) {
    case Activation::kIdentity:
      return "identity";
    case Activation::kTanh:
      return "tanh";
    case Activation::kRelu:
      return "relu";
    case Activation::kSoftmax:
      return "softmax";
  }
  return "identity";
}

absl::StatusOr<Activation> ParseActivation(const std::string& name) {
  if (name == "identity") return Activation::kIdentity;
  if (name == "tanh") return Activation::kTanh;
  if (name == "relu") return Activation::kRelu;
  if (name == "softmax") return Activation::kSoftmax;
  return absl::InvalidArgumentError("unknown activation '" + name + "'");
}

double ActivationValue(Activation a, double x) {
  switch (a) {
    case Activation::kTanh:
      return std::tanh(x);
    case Activation::kRelu:
      return x > 0.0 ? x : 0.0;
    default:
      return x;
  }
}

double ActivationSlope(Activation a, double x) {
  switch (a) {
    case Activation::kTanh: {
      const double t = std::tanh(x);
      return 1.0 - t * t;
    }
    case Activation::kRelu:
      return x > 0.0 ? 1.0 : 0.0;
    default:
      return 1.0;
  }
}

double ActivationCurvature(Activation a, double x) {
  if (a == Activation::kTanh) {
    const double t = std::tanh(x);
    return -2.0 * t * (1.0 - t * t);
  }
  return 0.0;
}

size_t MlpParams::input_size() const {
  return layers.empty() ? 0 : layers.front().weight.cols();
}

size_t MlpParams::output_size() const {
  return layers.empty() ? 0 : layers.back().weight.rows();
}

size_t MlpParams::ParameterCount() const {
  size_t n = 0;
  for (const DenseLayer& l : layers) n += l.weight.size() + l.bias.size();
  return n;
}

Vector MlpParams::Flatten() const {
  Vector flat;
  flat.reserve(ParameterCount());
  for (const DenseLayer& l : layers) {
    flat.insert(flat.end(), l.weight.data().begin(), l.weight.data().end());
    flat.insert(flat.end(), l.bias.begin(), l.bias.end());
  }
  return flat;
}

absl::Status MlpParams::Unflatten(std::span<const double> flat) {
  if (flat.size() != ParameterCount()) {
    return absl::InvalidArgumentError(
        absl::StrFormat("expected %d parameters, got %d", ParameterCount(),
                        flat.size()));
  }
  size_t at = 0;
  for (DenseLayer& l : layers) {
    std::copy_n(flat.begin() + at, l.weight.size(), l.weight.data().begin());
    at += l.weight.size();
    std::copy_n(flat.begin() + at, l.bias.size(), l.bias.begin());
    at += l.bias.size();
  }
  return absl::OkStatus();
}

absl::Status MlpParams::Validate() const {
  if (layers.empty()) return absl::InvalidArgumentError("network has no layers");
  for (size_t i = 0; i < layers.size(); ++i) {
    const DenseLayer& l = layers[i];
    if (l.bias.size() != l.weight.rows()) {
      return absl::InvalidArgumentError(
          absl::StrFormat("layer %d: bias size %d != %d rows", i, l.bias.size(),
                          l.weight.rows()));
    }
    if (i > 0 && l.weight.cols() != layers[i - 1].weight.rows()) {
      return absl::InvalidArgumentError(
          absl::StrFormat("layer %d: input size %d does not match previous "
                          "output %d",
                          i, l.weight.cols(), layers[i - 1].weight.rows()));
    }
    if (l.activation == Activation::kSoftmax && i + 1 != layers.size()) {
      return absl::InvalidArgumentError("softmax is only allowed on the output");
    }
    if (!l.weight.AllFinite() ||
        !std::all_of(l.bias.begin(), l.bias.end(),
                     [](double v) { return std::isfinite(v); })) {
      return absl::InvalidArgumentError(
          absl::StrFormat("layer %d has non-finite parameters", i));
    }
  }
  return absl::OkStatus();
}

MlpParams MakeMlp(std::span<const size_t> sizes, Activation hidden,
                  Activation output, Rng& rng) {
  MlpParams p;
  for (size_t i = 0; i + 1 < sizes.size(); ++i) {
    DenseLayer l;
    l.weight = Matrix(sizes[i + 1], sizes[i]);
    const double bound = 1.0 / std::sqrt(static_cast<double>(sizes[i]));
    for (double& w : l.weight.data()) w = rng.Uniform(-bound, bound);
    l.bias.assign(sizes[i + 1], 0.0);
    l.activation = (i + 2 == sizes.size()) ? output : hidden;
    p.layers.push_back(std::move(l));
  }
  return p;
}

namespace {

void ApplySoftmax(Vector& v) {
  const double m = *std::max_element(v.begin(), v.end());
  double s = 0.0;
  for (double& e : v) {
    e = std::exp(e - m);
    s += e;
  }
  for (double& e : v) e /= s;
}

}  // namespace

MlpTrace MlpForwardTrace(const MlpParams& p, std::span<const double> x) {
  MlpTrace t;
  t.inputs.reserve(p.layers.size());
  t.pre.reserve(p.layers.size());
  Vector h(x.begin(), x.end());
  for (const DenseLayer& l : p.layers) {
    Vector a = MatVec(l.weight, h);
    for (size_t i = 0; i < a.size(); ++i) a[i] += l.bias[i];
    t.inputs.push_back(std::move(h));
    Vector out = a;
    if (l.activation == Activation::kSoftmax) {
      ApplySoftmax(out);
    } else {
      for (double& e : out) e = ActivationValue(l.activation, e);
    }
    t.pre.push_back(std::move(a));
    h = std::move(out);
  }
  t.output = std::move(h);
  return t;
}

absl::StatusOr<Vector> MlpForward(const MlpParams& p,
                                  std::span<const double> x) {
  if (p.layers.empty()) return absl::InvalidArgumentError("empty network");
  if (x.size() != p.input_size()) {
    return absl::InvalidArgumentError(absl::StrFormat(
        "input has %d entries, network expects %d", x.size(), p.input_size()));
  }
  return MlpForwardTrace(p, x).output;
}

namespace {

// Offsets of each layer's weight block inside the flat parameter vector.
std::vector<size_t> LayerOffsets(const MlpParams& p) {
  std::vector<size_t> off;
  size_t at = 0;
  for (const DenseLayer& l : p.layers) {
    off.push_back(at);
    at += l.weight.size() + l.bias.size();
  }
  return off;
}

void AccumulateLayerGrad(const DenseLayer& l, std::span<const double> delta,
                         std::span<const double> input, double scale,
                         std::span<double> block) {
  const size_t out = l.weight.rows();
  const size_t in = l.weight.cols();
  for (size_t r = 0; r < out; ++r) {
    const double d = scale * delta[r];
    if (d == 0.0) continue;
    double* row = block.data() + r * in;
    for (size_t c = 0; c < in; ++c) row[c] += d * input[c];
    block[out * in + r] += d;
  }
}

}  // namespace

Vector MlpBackward(const MlpParams& p, const MlpTrace& trace,
                   std::span<const double> grad_out,
                   std::span<double> param_grad, double scale) {
  const std::vector<size_t> offsets = LayerOffsets(p);
  Vector adj(grad_out.begin(), grad_out.end());
  for (size_t li = p.layers.size(); li-- > 0;) {
    const DenseLayer& l = p.layers[li];
    Vector delta(adj.size());
    if (l.activation == Activation::kSoftmax) {
      delta = adj;
    } else {
      for (size_t i = 0; i < delta.size(); ++i) {
        delta[i] = adj[i] * ActivationSlope(l.activation, trace.pre[li][i]);
      }
    }
    if (!param_grad.empty()) {
      AccumulateLayerGrad(l, delta, trace.inputs[li], scale,
                          param_grad.subspan(offsets[li]));
    }
    adj = MatTVec(l.weight, delta);
  }
  return adj;
}

std::vector<Vector> MlpTangent(const MlpParams& p, const MlpTrace& trace,
                               std::span<const double> v) {
  std::vector<Vector> tangent_pre;
  tangent_pre.reserve(p.layers.size());
  Vector hdot(v.begin(), v.end());
  for (size_t li = 0; li < p.layers.size(); ++li) {
    const DenseLayer& l = p.layers[li];
    Vector adot = MatVec(l.weight, hdot);
    hdot.resize(adot.size());
    for (size_t i = 0; i < adot.size(); ++i) {
      hdot[i] = ActivationSlope(l.activation, trace.pre[li][i]) * adot[i];
    }
    tangent_pre.push_back(std::move(adot));
  }
  return tangent_pre;
}

Vector MlpOutputTangent(const MlpParams& p, const MlpTrace& trace,
                        const std::vector<Vector>& tangent_pre) {
  const size_t last = p.layers.size() - 1;
  const Activation act = p.layers[last].activation;
  Vector out(tangent_pre[last].size());
  for (size_t i = 0; i < out.size(); ++i) {
    out[i] = ActivationSlope(act, trace.pre[last][i]) * tangent_pre[last][i];
  }
  return out;
}

void MlpBackwardWithTangent(const MlpParams& p, const MlpTrace& trace,
                            const std::vector<Vector>& tangent_pre,
                            std::span<const double> v,
                            std::span<const double> out_adj,
                            std::span<const double> tan_adj,
                            std::span<double> param_grad, double scale) {
  const std::vector<size_t> offsets = LayerOffsets(p);
  Vector h_adj(out_adj.begin(), out_adj.end());
  Vector hdot_adj(tan_adj.begin(), tan_adj.end());
  for (size_t li = p.layers.size(); li-- > 0;) {
    const DenseLayer& l = p.layers[li];
    const Vector& a = trace.pre[li];
    const Vector& adot = tangent_pre[li];
    // Tangent of this layer's input.
    Vector hdot_in;
    if (li == 0) {
      hdot_in.assign(v.begin(), v.end());
    } else {
      const Activation prev = p.layers[li - 1].activation;
      const Vector& prev_a = trace.pre[li - 1];
      const Vector& prev_adot = tangent_pre[li - 1];
      hdot_in.resize(prev_a.size());
      for (size_t i = 0; i < prev_a.size(); ++i) {
        hdot_in[i] = ActivationSlope(prev, prev_a[i]) * prev_adot[i];
      }
    }
    Vector a_adj(a.size());
    Vector adot_adj(a.size());
    for (size_t i = 0; i < a.size(); ++i) {
      const double s = ActivationSlope(l.activation, a[i]);
      const double c = ActivationCurvature(l.activation, a[i]);
      adot_adj[i] = hdot_adj[i] * s;
      a_adj[i] = h_adj[i] * s + hdot_adj[i] * adot[i] * c;
    }
    std::span<double> block = param_grad.subspan(offsets[li]);
    AccumulateLayerGrad(l, a_adj, trace.inputs[li], scale, block);
    // The tangent path has no bias term.
    const size_t in = l.weight.cols();
    for (size_t r = 0; r < l.weight.rows(); ++r) {
      const double d = scale * adot_adj[r];
      if (d == 0.0) continue;
      double* row = block.data() + r * in;
      for (size_t c = 0; c < in; ++c) row[c] += d * hdot_in[c];
    }
    if (li > 0) {
      h_adj = MatTVec(l.weight, a_adj);
      hdot_adj = MatTVec(l.weight, adot_adj);
    }
  }
}

double SoftmaxCrossEntropy(std::span<const double> probs, int label,
                           std::span<double> grad_logits) {
  for (size_t i = 0; i < probs.size(); ++i) grad_logits[i] = probs[i];
  grad_logits[static_cast<size_t>(label)] -= 1.0;
  return -std::log(std::max(probs[static_cast<size_t>(label)], 1e-300));
}

size_t ArgMax(std::span<const double> v) {
  size_t best = 0;
  for (size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

std::string LayersToString(const MlpParams& net) {
  std::vector<std::string> parts;
  for (const DenseLayer& l : net.layers) {
    parts.push_back(absl::StrFormat("%dx%d:%s", l.weight.cols(),
                                    l.weight.rows(),
                                    ActivationName(l.activation)));
  }
  return absl::StrJoin(parts, ",");
}

absl::StatusOr<MlpParams> LayersFromString(const std::string& s) {
  MlpParams net;
  for (absl::string_view part : absl::StrSplit(s, ',')) {
    std::vector<std::string> sa = absl::StrSplit(part, ':');
    if (sa.size() != 2) return absl::InvalidArgumentError("bad layer spec");
    std::vector<std::string> io = absl::StrSplit(sa[0], 'x');
    size_t in, out;
    if (io.size() != 2 || !absl::SimpleAtoi(io[0], &in) ||
        !absl::SimpleAtoi(io[1], &out)) {
      return absl::InvalidArgumentError("bad layer shape");
    }
    absl::StatusOr<Activation> act = ParseActivation(sa[1]);
    if (!act.ok()) return act.status();
    net.layers.push_back({Matrix(out, in), Vector(out, 0.0), *act});
  }
  return net;
}

}  // namespace powerlearn
