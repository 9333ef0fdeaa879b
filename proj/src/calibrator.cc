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

#include <algorithm>
#include <cmath>
#include <limits>

#include "absl/strings/str_cat.h"
#include "absl/strings/str_format.h"
#include "json.hpp"
#include "powerlearn/bytes.h"

namespace powerlearn {
namespace {

double ScaledDistance(std::span<const double> score, double factor,
                      std::span<const double> jac) {
  double sq = 0.0;
  for (size_t j = 0; j < score.size(); ++j) {
    const double e = factor * score[j] - jac[j];
    sq += e * e;
  }
  return std::sqrt(sq);
}

}  // namespace

EpsilonPrime EpsilonPrimeFromTerms(std::span<const double> score,
                                   double log_fhat, double log_halfwidth,
                                   std::span<const double> jac) {
  // grad fhat / (fhat -+ hw) = score / (1 -+ r)
  const double r = std::exp(log_halfwidth - log_fhat);
  EpsilonPrime out;
  double shrunk = 1.0 - r;
  if (!(shrunk > kDenominatorFloor)) {
    shrunk = kDenominatorFloor;
    out.clamped = true;
  }
  out.lower = ScaledDistance(score, 1.0 / shrunk, jac);
  out.upper = ScaledDistance(score, 1.0 / (1.0 + r), jac);
  out.eps_prime = std::max(out.lower, out.upper);
  return out;
}

absl::StatusOr<EpsilonPrime> EpsilonPrimeFromDensity(
    std::span<const double> grad_fhat, double fhat, double halfwidth,
    std::span<const double> jac) {
  if (!(fhat > 0.0) || !(halfwidth >= 0.0)) {
    return absl::InvalidArgumentError("need fhat > 0 and halfwidth >= 0");
  }
  if (grad_fhat.size() != jac.size()) {
    return absl::InvalidArgumentError("gradient and jacobian term differ in size");
  }
  Vector score(grad_fhat.begin(), grad_fhat.end());
  for (double& s : score) s /= fhat;
  const double log_hw =
      halfwidth > 0.0 ? std::log(halfwidth)
                      : -std::numeric_limits<double>::infinity();
  return EpsilonPrimeFromTerms(score, std::log(fhat), log_hw, jac);
}

absl::StatusOr<EpsilonPrime> ComputeEpsilonPrime(const PrivatizerParams& p,
                                                 const DensityModel& density,
                                                 std::span<const double> x) {
  absl::StatusOr<DensityEval> ev = density.Evaluate(x);
  if (!ev.ok()) return ev.status();
  absl::StatusOr<Vector> jac = LogdetGradX(p, x);
  if (!jac.ok()) return jac.status();
  return EpsilonPrimeFromTerms(ev->score, ev->log_fhat, ev->log_halfwidth,
                               *jac);
}

double EpsilonAddOn(size_t d, size_t n, double h, double log_fhat,
                    double alpha) {
  const double dd = static_cast<double>(d);
  const double z = InverseNormalCdf(1.0 - alpha / 2.0);
  if (z <= 0.0) return 0.0;
  const double log_root =
      0.5 * (LogKernelConstant(d) - std::log(static_cast<double>(n)) -
             dd * std::log(h) - std::log(4.0) - log_fhat);
  return dd * std::exp(log_root) * z;
}

double EpsilonFinal(double eps_prime, size_t d, size_t n, double h,
                    double log_fhat, double alpha) {
  return eps_prime + EpsilonAddOn(d, n, h, log_fhat, alpha);
}

absl::StatusOr<double> ComputeEpsilonFinal(const PrivatizerParams& p,
                                           const DensityModel& density,
                                           std::span<const double> x) {
  absl::StatusOr<DensityEval> ev = density.Evaluate(x);
  if (!ev.ok()) return ev.status();
  absl::StatusOr<Vector> jac = LogdetGradX(p, x);
  if (!jac.ok()) return jac.status();
  const EpsilonPrime ep =
      EpsilonPrimeFromTerms(ev->score, ev->log_fhat, ev->log_halfwidth, *jac);
  return EpsilonFinal(ep.eps_prime, density.d(), density.n(),
                      density.bandwidth(), ev->log_fhat, density.alpha());
}

absl::StatusOr<DpGuarantee> ToDp(double eps_lip, double lambda_adj,
                                 double alpha) {
  if (!(lambda_adj > 0.0)) {
    return absl::InvalidArgumentError("adjacency radius must be positive");
  }
  if (!(alpha > 0.0 && alpha < 1.0)) {
    return absl::InvalidArgumentError("alpha must lie in (0, 1)");
  }
  if (!(eps_lip >= 0.0)) {
    return absl::InvalidArgumentError("epsilon must be non-negative");
  }
  return DpGuarantee{eps_lip, lambda_adj, eps_lip * lambda_adj, alpha};
}

absl::StatusOr<std::vector<CalibrationRecord>> Calibrate(
    const PrivatizerParams& p, const DensityModel& density, const Matrix& x,
    std::span<const size_t> indices) {
  if (!indices.empty() && indices.size() != x.rows()) {
    return absl::InvalidArgumentError("index list does not match row count");
  }
  if (x.rows() > 0 && x.cols() != p.dim()) {
    return absl::InvalidArgumentError(absl::StrFormat(
        "rows have dimension %d, privatizer expects %d", x.cols(), p.dim()));
  }
  absl::StatusOr<std::vector<DensityEval>> evals = density.EvaluateRows(x);
  if (!evals.ok()) return evals.status();
  std::vector<CalibrationRecord> out(x.rows());
  std::vector<absl::Status> errors(x.rows());
  ParallelFor(x.rows(), [&](size_t i) {
    const DensityEval& ev = (*evals)[i];
    CalibrationRecord& rec = out[i];
    rec.index = indices.empty() ? i : indices[i];
    rec.alpha = density.alpha();
    rec.fhat = ev.fhat;
    rec.log_fhat = ev.log_fhat;
    rec.halfwidth = ev.halfwidth;
    rec.floored = ev.floored;
    absl::StatusOr<Vector> jac = LogdetGradX(p, x.row(i));
    if (!jac.ok()) {
      if (!IsUnprivatizable(jac.status())) {
        errors[i] = jac.status();
        return;
      }
      rec.privatizable = false;
      rec.eps_prime = rec.lower = rec.upper = rec.eps_final =
          std::numeric_limits<double>::infinity();
      return;
    }
    const EpsilonPrime ep =
        EpsilonPrimeFromTerms(ev.score, ev.log_fhat, ev.log_halfwidth, *jac);
    rec.eps_prime = ep.eps_prime;
    rec.lower = ep.lower;
    rec.upper = ep.upper;
    rec.clamped = ep.clamped;
    rec.eps_final = EpsilonFinal(ep.eps_prime, density.d(), density.n(),
                                 density.bandwidth(), ev.log_fhat, rec.alpha);
  });
  for (const absl::Status& e : errors) {
    if (!e.ok()) return e;
  }
  return out;
}

std::vector<double> HistogramSpec::Edges() const {
  std::vector<double> edges(bins + 1);
  for (size_t i = 0; i <= bins; ++i) {
    edges[i] = lo + width * static_cast<double>(i);
  }
  return edges;
}

size_t HistogramSpec::BinOf(double v) const {
  if (!(v > lo)) return 0;
  const double k = std::floor((v - lo) / width);
  if (!(k < static_cast<double>(bins))) return bins - 1;
  return static_cast<size_t>(k);
}

ReleaseDecision FilterRelease(std::vector<CalibrationRecord>& records,
                              double eps_target, double lambda_adj,
                              const HistogramSpec& hist) {
  ReleaseDecision out;
  PrivacyReport& rep = out.report;
  rep.bin_edges = hist.Edges();
  rep.counts.assign(hist.bins, 0);
  rep.released_counts.assign(hist.bins, 0);
  rep.eps_target = eps_target;
  rep.lambda_adj = lambda_adj;
  rep.total = records.size();
  if (!records.empty()) rep.alpha = records.front().alpha;
  for (size_t i = 0; i < records.size(); ++i) {
    CalibrationRecord& r = records[i];
    r.released = r.privatizable && r.eps_final <= eps_target;
    if (r.clamped) ++rep.clamp_count;
    if (r.floored) ++rep.floored_count;
    if (!r.privatizable) {
      ++rep.unprivatizable_count;
      continue;
    }
    const size_t bin = hist.BinOf(r.eps_final);
    ++rep.counts[bin];
    if (r.released) {
      ++rep.released_counts[bin];
      out.released.push_back(i);
      rep.dataset_eps = std::max(rep.dataset_eps, r.eps_final);
    }
  }
  rep.released_count = out.released.size();
  rep.empty_release = out.released.empty();
  const double alpha = rep.alpha > 0.0 && rep.alpha < 1.0 ? rep.alpha : 0.05;
  rep.dp = DpGuarantee{rep.dataset_eps, lambda_adj,
                       rep.dataset_eps * lambda_adj, alpha};
  return out;
}

std::string PrivacyReport::ToJson() const {
  nlohmann::ordered_json j;
  j["bins"] = bin_edges;
  j["counts"] = counts;
  j["released_counts"] = released_counts;
  j["alpha"] = alpha;
  j["eps_target"] = eps_target;
  j["released_count"] = released_count;
  j["clamp_count"] = clamp_count;
  j["floored_count"] = floored_count;
  j["unprivatizable_count"] = unprivatizable_count;
  j["total"] = total;
  j["empty_release"] = empty_release;
  j["dataset_eps"] = dataset_eps;
  j["dp"] = {{"eps_lip", dp.eps_lip},
             {"lambda_adj", dp.lambda_adj},
             {"eps_dp", dp.eps_dp},
             {"delta", dp.delta}};
  return j.dump(2);
}

std::string CalibrationCsv(std::span<const CalibrationRecord> records) {
  std::string out = "index,eps_prime,eps_final,fhat,halfwidth,released\n";
  for (const CalibrationRecord& r : records) {
    absl::StrAppend(&out, r.index, ",", FormatDouble(r.eps_prime), ",",
                    FormatDouble(r.eps_final), ",", FormatDouble(r.fhat), ",",
                    FormatDouble(r.halfwidth), ",", r.released ? 1 : 0, "\n");
  }
  return out;
}

double Wasserstein1(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) return 0.0;
  std::vector<double> sa(a.begin(), a.end()), sb(b.begin(), b.end());
  std::sort(sa.begin(), sa.end());
  std::sort(sb.begin(), sb.end());
  // Integrate |F_a - F_b| over the merged breakpoints.
  const double na = static_cast<double>(sa.size());
  const double nb = static_cast<double>(sb.size());
  size_t i = 0, k = 0;
  double prev = std::min(sa.front(), sb.front());
  double total = 0.0;
  while (i < sa.size() || k < sb.size()) {
    double next;
    if (k >= sb.size() || (i < sa.size() && sa[i] <= sb[k])) {
      next = sa[i];
    } else {
      next = sb[k];
    }
    total += std::abs(static_cast<double>(i) / na - static_cast<double>(k) / nb) *
             (next - prev);
    prev = next;
    while (i < sa.size() && sa[i] == next) ++i;
    while (k < sb.size() && sb[k] == next) ++k;
  }
  return total;
}

double HistogramWasserstein1(std::span<const size_t> a,
                             std::span<const size_t> b,
                             std::span<const double> edges) {
  double na = 0.0, nb = 0.0;
  for (size_t v : a) na += static_cast<double>(v);
  for (size_t v : b) nb += static_cast<double>(v);
  if (na == 0.0 || nb == 0.0 || a.size() != b.size() ||
      edges.size() != a.size() + 1) {
    return 0.0;
  }
  double ca = 0.0, cb = 0.0, total = 0.0;
  for (size_t i = 0; i + 1 < a.size(); ++i) {
    ca += static_cast<double>(a[i]) / na;
    cb += static_cast<double>(b[i]) / nb;
    // Gap between consecutive bin centres.
    total += std::abs(ca - cb) * 0.5 * (edges[i + 2] - edges[i]);
  }
  return total;
}

double HistogramMean(std::span<const size_t> counts,
                     std::span<const double> edges) {
  double mass = 0.0, sum = 0.0;
  for (size_t i = 0; i < counts.size() && i + 1 < edges.size(); ++i) {
    mass += static_cast<double>(counts[i]);
    sum += static_cast<double>(counts[i]) * 0.5 * (edges[i] + edges[i + 1]);
  }
  return mass > 0.0 ? sum / mass : 0.0;
}

}  // namespace powerlearn
