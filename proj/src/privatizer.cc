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

#include "absl/status/status.h"
#include "absl/strings/match.h"
#include "absl/strings/numbers.h"
#include "absl/strings/str_cat.h"
#include "absl/strings/str_format.h"

namespace powerlearn {
namespace {

constexpr char kMagic[] = "PLPRIV1\n";
constexpr char kUnprivatizable[] = "unprivatizable";

// log(1 - tanh(a)^2) without underflow for large |a|.
double LogTanhSlope(double a) {
  const double t = std::abs(a);
  return 2.0 * std::numbers::ln2 - 2.0 * t - 2.0 * std::log1p(std::exp(-2.0 * t));
}

absl::Status Unprivatizable(const std::string& why) {
  return absl::FailedPreconditionError(absl::StrCat(kUnprivatizable, ": ", why));
}

absl::Status CheckInput(const PrivatizerParams& p, std::span<const double> x) {
  if (x.size() != p.dim()) {
    return absl::InvalidArgumentError(absl::StrFormat(
        "input has dimension %d, privatizer expects %d", x.size(), p.dim()));
  }
  for (double v : x) {
    if (!std::isfinite(v)) {
      return absl::InvalidArgumentError("input has non-finite coordinates");
    }
  }
  return absl::OkStatus();
}

// Factors m, retrying once with m + jitter I when |det m| < kSingularDet.
absl::StatusOr<LuDecomposition> FactorWithJitter(Matrix& m, double jitter,
                                                 bool& jittered) {
  jittered = false;
  absl::StatusOr<LuDecomposition> lu = LuDecomposition::Factor(m);
  if (!lu.ok()) return lu.status();
  const double log_floor = std::log(kSingularDet);
  if (!lu->singular() && lu->LogDet().logabs >= log_floor) return lu;
  if (jitter <= 0.0) return Unprivatizable("singular Jacobian and no jitter");
  for (size_t i = 0; i < m.rows(); ++i) m(i, i) += jitter;
  jittered = true;
  lu = LuDecomposition::Factor(m);
  if (!lu.ok()) return lu.status();
  if (lu->singular() || lu->LogDet().logabs < log_floor) {
    return Unprivatizable("Jacobian singular after jitter");
  }
  return lu;
}
}  // namespace

std::string VariantName(PrivatizerVariant v) {
  return v == PrivatizerVariant::kLinearPower ? "linear-power"
                                              : "two-layer-tanh";
}

absl::StatusOr<PrivatizerVariant> ParseVariant(const std::string& name) {
  if (name == "linear-power") return PrivatizerVariant::kLinearPower;
  if (name == "two-layer-tanh") return PrivatizerVariant::kTwoLayerTanh;
  return absl::InvalidArgumentError("unknown privatizer variant '" + name + "'");
}

bool IsUnprivatizable(const absl::Status& s) {
  return s.code() == absl::StatusCode::kFailedPrecondition &&
         absl::StartsWith(s.message(), kUnprivatizable);
}

size_t PrivatizerParams::dim() const {
  return variant == PrivatizerVariant::kLinearPower ? net.input_size()
                                                    : w1.cols();
}

size_t PrivatizerParams::ParameterCount() const {
  return variant == PrivatizerVariant::kLinearPower
             ? net.ParameterCount()
             : w1.size() + w2.size() + b2.size();
}

Vector PrivatizerParams::Flatten() const {
  if (variant == PrivatizerVariant::kLinearPower) return net.Flatten();
  Vector out;
  out.reserve(ParameterCount());
  out.insert(out.end(), w1.data().begin(), w1.data().end());
  out.insert(out.end(), w2.data().begin(), w2.data().end());
  out.insert(out.end(), b2.begin(), b2.end());
  return out;
}

absl::Status PrivatizerParams::Unflatten(std::span<const double> flat) {
  if (variant == PrivatizerVariant::kLinearPower) return net.Unflatten(flat);
  if (flat.size() != ParameterCount()) {
    return absl::InvalidArgumentError(absl::StrFormat(
        "expected %d parameters, got %d", ParameterCount(), flat.size()));
  }
  auto it = flat.begin();
  std::copy(it, it + w1.size(), w1.data().begin());
  it += w1.size();
  std::copy(it, it + w2.size(), w2.data().begin());
  it += w2.size();
  std::copy(it, it + b2.size(), b2.begin());
  return absl::OkStatus();
}

absl::Status PrivatizerParams::Validate() const {
  if (power < 1) return absl::InvalidArgumentError("power must be >= 1");
  if (!(jitter >= 0.0) || !std::isfinite(jitter)) {
    return absl::InvalidArgumentError("jitter must be finite and >= 0");
  }
  if (variant == PrivatizerVariant::kLinearPower) {
    if (absl::Status s = net.Validate(); !s.ok()) return s;
    const size_t d = net.input_size();
    if (d == 0 || net.output_size() != d * d) {
      return absl::InvalidArgumentError(absl::StrFormat(
          "P_N must map d to d*d outputs, has %d -> %d", d, net.output_size()));
    }
    if (net.layers.back().activation == Activation::kSoftmax) {
      return absl::InvalidArgumentError("P_N output cannot be softmax");
    }
    return absl::OkStatus();
  }
  const size_t d = w1.cols();
  if (d == 0 || w1.rows() == 0 || w2.rows() != d || w2.cols() != w1.rows() ||
      b2.size() != d) {
    return absl::InvalidArgumentError(
        "two-layer-tanh needs W1 (h_w x d), W2 (d x h_w), b2 (d)");
  }
  if (!w1.AllFinite() || !w2.AllFinite()) {
    return absl::InvalidArgumentError("non-finite weights");
  }
  for (double v : b2) {
    if (!std::isfinite(v)) return absl::InvalidArgumentError("non-finite bias");
  }
  return absl::OkStatus();
}

PrivatizerParams MakeLinearPower(size_t d, std::span<const size_t> hidden,
                                 int power, Rng& rng, double output_scale) {
  std::vector<size_t> sizes = {d};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(d * d);
  PrivatizerParams p;
  p.variant = PrivatizerVariant::kLinearPower;
  p.power = power;
  p.net = MakeMlp(sizes, Activation::kTanh, Activation::kIdentity, rng);
  for (double& w : p.net.layers.back().weight.data()) w *= output_scale;
  return p;
}

PrivatizerParams MakeLinearPower(size_t d, int power, Rng& rng,
                                 double output_scale) {
  const size_t hidden[] = {2 * d};
  return MakeLinearPower(d, hidden, power, rng, output_scale);
}

PrivatizerParams MakeTwoLayerTanh(size_t d, size_t hw, Rng& rng) {
  PrivatizerParams p;
  p.variant = PrivatizerVariant::kTwoLayerTanh;
  p.w1 = Matrix(hw, d);
  p.w2 = Matrix(d, hw);
  p.b2.assign(d, 0.0);
  const double s1 = 1.0 / std::sqrt(static_cast<double>(d));
  const double s2 = 1.0 / std::sqrt(static_cast<double>(hw));
  for (double& w : p.w1.data()) w = rng.Uniform(-s1, s1);
  for (double& w : p.w2.data()) w = rng.Uniform(-s2, s2);
  return p;
}

PrivatizerParams MakeConstantH(const Matrix& h, int power) {
  const size_t d = h.rows();
  PrivatizerParams p;
  p.variant = PrivatizerVariant::kLinearPower;
  p.power = power;
  p.net.layers.push_back(
      {Matrix(2 * d, d), Vector(2 * d, 0.0), Activation::kTanh});
  DenseLayer out{Matrix(d * d, 2 * d), Vector(d * d, 0.0),
                 Activation::kIdentity};
  for (size_t r = 0; r < d; ++r)
    for (size_t c = 0; c < d; ++c)
      out.bias[r * d + c] = h(r, c) - (r == c ? 1.0 : 0.0);
  p.net.layers.push_back(std::move(out));
  return p;
}

PrivatizerParams MakeIdentity(size_t d) {
  return MakeConstantH(Matrix::Identity(d), 1);
}

absl::StatusOr<PrivatizerTape> PrivatizerTape::Record(
    const PrivatizerParams& p, std::span<const double> x) {
  if (absl::Status s = CheckInput(p, x); !s.ok()) return s;
  PrivatizerTape tape(p);
  PrivatizedSample& smp = tape.sample_;
  const size_t d = p.dim();
  smp.x.assign(x.begin(), x.end());

  if (p.variant == PrivatizerVariant::kLinearPower) {
    tape.trace_ = MlpForwardTrace(p.net, x);
    const Vector& o = tape.trace_.output;
    tape.h_ = Matrix::Identity(d);
    for (size_t i = 0; i < d * d; ++i) tape.h_.data()[i] += o[i];
    if (!tape.h_.AllFinite()) return Unprivatizable("non-finite H");
    absl::StatusOr<LuDecomposition> lu =
        FactorWithJitter(tape.h_, p.jitter, smp.jittered);
    if (!lu.ok()) return lu.status();
    const SignedLogDet ld = lu->LogDet();
    tape.h_inv_ = lu->Inverse();
    smp.logdet_sum = p.power * ld.logabs;
    smp.det_sign = (p.power % 2 == 0) ? 1 : ld.sign;
    Vector c(d * d);
    for (size_t r = 0; r < d; ++r)
      for (size_t cc = 0; cc < d; ++cc)
        c[r * d + cc] = p.power * tape.h_inv_(cc, r);
    smp.logdet_grad_x = MlpBackward(p.net, tape.trace_, c, {});
    Vector w(x.begin(), x.end());
    for (int k = 0; k < p.power; ++k) w = MatVec(tape.h_, w);
    smp.z = std::move(w);
  } else {
    tape.h_ = MatMul(p.w2, p.w1);
    absl::StatusOr<LuDecomposition> lu =
        FactorWithJitter(tape.h_, p.jitter, smp.jittered);
    if (!lu.ok()) return lu.status();
    const SignedLogDet ld = lu->LogDet();
    Vector a = MatVec(tape.h_, x);
    tape.tanh_.resize(d);
    Vector xi(d);
    smp.logdet_sum = ld.logabs;
    for (size_t i = 0; i < d; ++i) {
      a[i] += p.b2[i];
      tape.tanh_[i] = std::tanh(a[i]);
      xi[i] = -2.0 * tape.tanh_[i];
      smp.logdet_sum += LogTanhSlope(a[i]);
    }
    smp.det_sign = ld.sign;
    smp.logdet_grad_x = MatTVec(tape.h_, xi);
    smp.z = tape.tanh_;
  }
  for (double v : smp.z) {
    if (!std::isfinite(v)) return Unprivatizable("non-finite embedding");
  }
  for (double v : smp.logdet_grad_x) {
    if (!std::isfinite(v)) return Unprivatizable("non-finite log-det gradient");
  }
  return tape;
}

double PrivatizerTape::PrivacyLoss(std::span<const double> score) const {
  double s = 0.0;
  for (size_t j = 0; j < score.size(); ++j) {
    const double t = score[j] - sample_.logdet_grad_x[j];
    s += t * t;
  }
  return std::sqrt(s);
}

void PrivatizerTape::Backward(std::span<const double> score, double lp_weight,
                              std::span<const double> z_adjoint,
                              std::span<double> grad) const {
  const PrivatizerParams& p = *params_;
  const size_t d = p.dim();
  const Vector& g = sample_.logdet_grad_x;
  const double lp = PrivacyLoss(score);
  const bool use_lp = lp_weight != 0.0 && lp > 0.0;
  const bool use_z = !z_adjoint.empty();
  if (!use_lp && !use_z) return;
  Vector v(d, 0.0);
  if (use_lp) {
    for (size_t j = 0; j < d; ++j) v[j] = (g[j] - score[j]) / lp;
  }

  if (p.variant == PrivatizerVariant::kLinearPower) {
    Vector out_adj(d * d, 0.0);
    Vector tan_adj;
    std::vector<Vector> tangent_pre;
    if (use_lp) {
      tangent_pre = MlpTangent(p.net, trace_, v);
      const Vector odot = MlpOutputTangent(p.net, trace_, tangent_pre);
      Matrix m(d, d);
      std::copy(odot.begin(), odot.end(), m.data().begin());
      const Matrix ama = MatMul(MatMul(h_inv_, m), h_inv_);
      tan_adj.resize(d * d);
      for (size_t r = 0; r < d; ++r) {
        for (size_t c = 0; c < d; ++c) {
          out_adj[r * d + c] = -lp_weight * p.power * ama(c, r);
          tan_adj[r * d + c] = lp_weight * p.power * h_inv_(c, r);
        }
      }
    }
    if (use_z) {
      std::vector<Vector> w(p.power + 1);
      w[0] = sample_.x;
      for (int k = 0; k < p.power; ++k) w[k + 1] = MatVec(h_, w[k]);
      Vector gw(z_adjoint.begin(), z_adjoint.end());
      for (int k = p.power - 1; k >= 0; --k) {
        for (size_t r = 0; r < d; ++r)
          for (size_t c = 0; c < d; ++c) out_adj[r * d + c] += gw[r] * w[k][c];
        if (k > 0) gw = MatTVec(h_, gw);
      }
    }
    if (use_lp) {
      MlpBackwardWithTangent(p.net, trace_, tangent_pre, v, out_adj, tan_adj,
                             grad);
    } else {
      MlpBackward(p.net, trace_, out_adj, grad);
    }
    return;
  }

  // Two-layer-tanh. gb accumulates dF/dB for B = W2 W1, db2 the bias part.
  const size_t hw = p.w1.rows();
  Matrix gb(d, d);
  Vector db2(d, 0.0);
  if (use_lp) {
    const Vector beta = MatVec(h_, v);
    Vector xi(d), da(d);
    for (size_t i = 0; i < d; ++i) {
      const double t = tanh_[i];
      xi[i] = -2.0 * t;
      da[i] = lp_weight * beta[i] * (-2.0 * (1.0 - t * t));
    }
    AddOuter(gb, xi, v, lp_weight);
    AddOuter(gb, da, sample_.x);
    for (size_t i = 0; i < d; ++i) db2[i] += da[i];
  }
  if (use_z) {
    Vector abar(d);
    for (size_t i = 0; i < d; ++i) {
      abar[i] = z_adjoint[i] * (1.0 - tanh_[i] * tanh_[i]);
    }
    AddOuter(gb, abar, sample_.x);
    for (size_t i = 0; i < d; ++i) db2[i] += abar[i];
  }
  const Matrix dw1 = MatMul(p.w2.Transposed(), gb);  // hw x d
  const Matrix dw2 = MatMul(gb, p.w1.Transposed());  // d x hw
  size_t off = 0;
  for (size_t i = 0; i < hw * d; ++i) grad[off + i] += dw1.data()[i];
  off += hw * d;
  for (size_t i = 0; i < d * hw; ++i) grad[off + i] += dw2.data()[i];
  off += d * hw;
  for (size_t i = 0; i < d; ++i) grad[off + i] += db2[i];
}

absl::StatusOr<PrivatizedSample> Privatize(const PrivatizerParams& p,
                                           std::span<const double> x) {
  absl::StatusOr<PrivatizerTape> tape = PrivatizerTape::Record(p, x);
  if (!tape.ok()) return tape.status();
  return tape->sample();
}

absl::StatusOr<Vector> LogdetGradX(const PrivatizerParams& p,
                                   std::span<const double> x) {
  absl::StatusOr<PrivatizedSample> s = Privatize(p, x);
  if (!s.ok()) return s.status();
  return std::move(s->logdet_grad_x);
}

absl::StatusOr<double> PrivacyLossWithScore(const PrivatizerParams& p,
                                            std::span<const double> score,
                                            std::span<const double> x) {
  if (score.size() != p.dim()) {
    return absl::InvalidArgumentError("score has wrong dimension");
  }
  absl::StatusOr<PrivatizerTape> tape = PrivatizerTape::Record(p, x);
  if (!tape.ok()) return tape.status();
  return tape->PrivacyLoss(score);
}

absl::StatusOr<double> PrivacyLoss(const PrivatizerParams& p,
                                   const DensityModel& density,
                                   std::span<const double> x) {
  absl::StatusOr<Vector> score = density.Score(x);
  if (!score.ok()) return score.status();
  return PrivacyLossWithScore(p, *score, x);
}

absl::StatusOr<PrivatizedRows> PrivatizeRows(const PrivatizerParams& p,
                                             const Matrix& x) {
  if (absl::Status s = p.Validate(); !s.ok()) return s;
  if (x.cols() != p.dim()) {
    return absl::InvalidArgumentError(absl::StrFormat(
        "rows have dimension %d, privatizer expects %d", x.cols(), p.dim()));
  }
  PrivatizedRows out;
  out.z = Matrix(x.rows(), p.dim());
  out.ok.assign(x.rows(), 0);
  out.logdet_sum.assign(x.rows(), 0.0);
  std::vector<absl::Status> errors(x.rows());
  ParallelFor(x.rows(), [&](size_t i) {
    absl::StatusOr<PrivatizedSample> s = Privatize(p, x.row(i));
    if (!s.ok()) {
      errors[i] = s.status();
      return;
    }
    std::copy(s->z.begin(), s->z.end(), out.z.row(i).begin());
    out.logdet_sum[i] = s->logdet_sum;
    out.ok[i] = 1;
  });
  for (const absl::Status& e : errors) {
    if (e.ok()) continue;
    if (!IsUnprivatizable(e)) return e;
    ++out.failures;
  }
  return out;
}

absl::StatusOr<double> FullJacobianLogdet(const PrivatizerParams& p,
                                          std::span<const double> x,
                                          double step) {
  const size_t d = p.dim();
  if (d > 4) {
    return absl::InvalidArgumentError(
        "full-Jacobian debug mode is limited to d <= 4");
  }
  if (absl::Status s = CheckInput(p, x); !s.ok()) return s;
  Matrix j(d, d);
  Vector probe(x.begin(), x.end());
  for (size_t c = 0; c < d; ++c) {
    probe[c] = x[c] + step;
    absl::StatusOr<PrivatizedSample> up = Privatize(p, probe);
    probe[c] = x[c] - step;
    absl::StatusOr<PrivatizedSample> dn = Privatize(p, probe);
    probe[c] = x[c];
    if (!up.ok()) return up.status();
    if (!dn.ok()) return dn.status();
    for (size_t r = 0; r < d; ++r) j(r, c) = (up->z[r] - dn->z[r]) / (2 * step);
  }
  absl::StatusOr<SignedLogDet> ld = Slogdet(j);
  if (!ld.ok()) return ld.status();
  if (ld->sign == 0) return Unprivatizable("full Jacobian is singular");
  return ld->logabs;
}

absl::StatusOr<Vector> FullJacobianLogdetGrad(const PrivatizerParams& p,
                                              std::span<const double> x,
                                              double step) {
  absl::Status inner = absl::OkStatus();
  auto f = [&](std::span<const double> q) {
    absl::StatusOr<double> v = FullJacobianLogdet(p, q);
    if (!v.ok()) {
      inner = v.status();
      return std::numeric_limits<double>::quiet_NaN();
    }
    return *v;
  };
  absl::StatusOr<Vector> g = GradOracle(f, x, step);
  if (!inner.ok()) return inner;
  return g;
}

void ProjectWeightNorms(PrivatizerParams& p) {
  if (p.variant != PrivatizerVariant::kTwoLayerTanh) return;
  const double hw = static_cast<double>(p.w1.rows());
  const double m = static_cast<double>(p.w2.rows());
  const double s1 = SpectralNorm(p.w1);
  if (s1 > std::sqrt(hw)) {
    for (double& w : p.w1.data()) w *= std::sqrt(hw) / s1;
  }
  const double f2 = FrobeniusNorm(p.w2);
  if (f2 > std::sqrt(m)) {
    for (double& w : p.w2.data()) w *= std::sqrt(m) / f2;
  }
}

Bytes SerializePrivatizer(const PrivatizerParams& p) {
  Bytes out;
  AppendString(out, kMagic);
  auto line = [&](const std::string& k, const std::string& v) {
    AppendString(out, k + "=" + v + "\n");
  };
  line("variant", VariantName(p.variant));
  line("dim", std::to_string(p.dim()));
  line("power", std::to_string(p.power));
  line("jitter", FormatDouble(p.jitter));
  if (p.variant == PrivatizerVariant::kLinearPower) {
    line("layers", LayersToString(p.net));
  } else {
    line("hw", std::to_string(p.w1.rows()));
  }
  line("count", std::to_string(p.ParameterCount()));
  AppendString(out, "\n");
  for (double v : p.Flatten()) AppendF64(out, v);
  AppendU32(out, Crc32(out));
  return out;
}

absl::StatusOr<PrivatizerParams> DeserializePrivatizer(
    std::span<const uint8_t> bytes) {
  const size_t magic_len = sizeof(kMagic) - 1;
  if (bytes.size() < magic_len + 4 ||
      !std::equal(kMagic, kMagic + magic_len, bytes.begin())) {
    return absl::InvalidArgumentError("not a privatizer blob (bad magic)");
  }
  const size_t body = bytes.size() - 4;
  if (Crc32(bytes.first(body)) != LoadU32(bytes.data() + body)) {
    return absl::DataLossError("privatizer blob CRC mismatch");
  }
  size_t pos = magic_len;
  absl::StatusOr<std::map<std::string, std::string>> hdr =
      ParseHeaderLines(bytes.first(body), pos);
  if (!hdr.ok()) return hdr.status();
  auto get = [&](const std::string& k) -> absl::StatusOr<std::string> {
    auto it = hdr->find(k);
    if (it == hdr->end()) {
      return absl::InvalidArgumentError("privatizer blob lacks '" + k + "'");
    }
    return it->second;
  };
  PrivatizerParams p;
  absl::StatusOr<std::string> variant = get("variant");
  if (!variant.ok()) return variant.status();
  absl::StatusOr<PrivatizerVariant> v = ParseVariant(*variant);
  if (!v.ok()) return v.status();
  p.variant = *v;
  size_t dim = 0, count = 0;
  absl::StatusOr<std::string> s_dim = get("dim"), s_power = get("power"),
                              s_jitter = get("jitter"), s_count = get("count");
  for (const auto* s : {&s_dim, &s_power, &s_jitter, &s_count}) {
    if (!s->ok()) return s->status();
  }
  if (!absl::SimpleAtoi(*s_dim, &dim) || !absl::SimpleAtoi(*s_power, &p.power) ||
      !absl::SimpleAtod(*s_jitter, &p.jitter) ||
      !absl::SimpleAtoi(*s_count, &count)) {
    return absl::InvalidArgumentError("malformed privatizer header value");
  }
  if (p.variant == PrivatizerVariant::kLinearPower) {
    absl::StatusOr<std::string> layers = get("layers");
    if (!layers.ok()) return layers.status();
    absl::StatusOr<MlpParams> net = LayersFromString(*layers);
    if (!net.ok()) return net.status();
    p.net = *std::move(net);
  } else {
    absl::StatusOr<std::string> s_hw = get("hw");
    if (!s_hw.ok()) return s_hw.status();
    size_t hw = 0;
    if (!absl::SimpleAtoi(*s_hw, &hw)) {
      return absl::InvalidArgumentError("malformed hw");
    }
    p.w1 = Matrix(hw, dim);
    p.w2 = Matrix(dim, hw);
    p.b2.assign(dim, 0.0);
  }
  if (p.ParameterCount() != count || p.dim() != dim) {
    return absl::InvalidArgumentError("privatizer header is inconsistent");
  }
  if (body - pos != 8 * count) {
    return absl::OutOfRangeError("privatizer payload has the wrong length");
  }
  Vector flat(count);
  for (size_t i = 0; i < count; ++i) flat[i] = LoadF64(bytes.data() + pos + 8 * i);
  if (absl::Status s = p.Unflatten(flat); !s.ok()) return s;
  if (absl::Status s = p.Validate(); !s.ok()) return s;
  return p;
}

}  // namespace powerlearn
