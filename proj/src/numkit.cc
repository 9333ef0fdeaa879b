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

#include "powerlearn/numkit.h"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <thread>

#include "absl/status/status.h"
#include "absl/strings/str_format.h"

namespace powerlearn {

absl::StatusOr<Matrix> Matrix::FromData(size_t rows, size_t cols,
                                        std::vector<double> data) {
  if (data.size() != rows * cols) {
    return absl::InvalidArgumentError(absl::StrFormat(
        "matrix data has %d entries, expected %d x %d", data.size(), rows,
        cols));
  }
  Matrix m;
  m.rows_ = rows;
  m.cols_ = cols;
  m.data_ = std::move(data);
  return m;
}

Matrix Matrix::Identity(size_t n) {
  Matrix m(n, n);
  for (size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::Transposed() const {
  Matrix t(cols_, rows_);
  for (size_t r = 0; r < rows_; ++r) {
    for (size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
  }
  return t;
}

bool Matrix::AllFinite() const {
  return std::all_of(data_.begin(), data_.end(),
                     [](double v) { return std::isfinite(v); });
}

Matrix MatMul(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), b.cols());
  for (size_t i = 0; i < a.rows(); ++i) {
    std::span<double> out_row = out.row(i);
    for (size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      std::span<const double> b_row = b.row(k);
      for (size_t j = 0; j < b.cols(); ++j) out_row[j] += aik * b_row[j];
    }
  }
  return out;
}

Vector MatVec(const Matrix& a, std::span<const double> x) {
  Vector out(a.rows(), 0.0);
  for (size_t i = 0; i < a.rows(); ++i) out[i] = Dot(a.row(i), x);
  return out;
}

Vector MatTVec(const Matrix& a, std::span<const double> x) {
  Vector out(a.cols(), 0.0);
  for (size_t i = 0; i < a.rows(); ++i) {
    const double xi = x[i];
    if (xi == 0.0) continue;
    std::span<const double> r = a.row(i);
    for (size_t j = 0; j < a.cols(); ++j) out[j] += xi * r[j];
  }
  return out;
}

void AddOuter(Matrix& out, std::span<const double> u,
              std::span<const double> v, double scale) {
  for (size_t i = 0; i < out.rows(); ++i) {
    const double ui = scale * u[i];
    if (ui == 0.0) continue;
    std::span<double> r = out.row(i);
    for (size_t j = 0; j < out.cols(); ++j) r[j] += ui * v[j];
  }
}

double Dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double Norm2(std::span<const double> a) { return std::sqrt(Dot(a, a)); }

double FrobeniusNorm(const Matrix& m) { return Norm2(m.data()); }

double SpectralNorm(const Matrix& m) {
  if (m.empty()) return 0.0;
  // Start from a fixed non-degenerate vector so results are reproducible.
  Vector v(m.cols());
  for (size_t i = 0; i < v.size(); ++i) v[i] = 1.0 + 0.01 * static_cast<double>(i);
  double sigma = 0.0;
  for (int it = 0; it < 500; ++it) {
    const double nv = Norm2(v);
    if (nv == 0.0) return 0.0;
    for (double& e : v) e /= nv;
    Vector mv = MatVec(m, v);
    Vector next = MatTVec(m, mv);
    const double next_sigma = Norm2(mv);
    v = std::move(next);
    if (std::abs(next_sigma - sigma) <= 1e-14 * std::max(1.0, next_sigma)) {
      sigma = next_sigma;
      break;
    }
    sigma = next_sigma;
  }
  return sigma;
}

Matrix SelectRows(const Matrix& m, std::span<const size_t> rows) {
  Matrix out(rows.size(), m.cols());
  for (size_t i = 0; i < rows.size(); ++i) {
    std::copy_n(m.row(rows[i]).begin(), m.cols(), out.row(i).begin());
  }
  return out;
}

absl::StatusOr<LuDecomposition> LuDecomposition::Factor(const Matrix& m) {
  if (m.rows() != m.cols()) {
    return absl::InvalidArgumentError(absl::StrFormat(
        "LU needs a square matrix, got %d x %d", m.rows(), m.cols()));
  }
  const size_t n = m.rows();
  LuDecomposition lu;
  lu.lu_ = m;
  lu.pivot_.resize(n);
  for (size_t i = 0; i < n; ++i) lu.pivot_[i] = i;
  Matrix& a = lu.lu_;
  for (size_t k = 0; k < n; ++k) {
    size_t p = k;
    double best = std::abs(a(k, k));
    for (size_t i = k + 1; i < n; ++i) {
      if (std::abs(a(i, k)) > best) {
        best = std::abs(a(i, k));
        p = i;
      }
    }
    if (best == 0.0) {
      lu.singular_ = true;
      continue;
    }
    if (p != k) {
      std::swap_ranges(a.row(k).begin(), a.row(k).end(), a.row(p).begin());
      std::swap(lu.pivot_[k], lu.pivot_[p]);
      lu.parity_ = -lu.parity_;
    }
    const double pivot = a(k, k);
    for (size_t i = k + 1; i < n; ++i) {
      const double f = a(i, k) / pivot;
      a(i, k) = f;
      if (f == 0.0) continue;
      for (size_t j = k + 1; j < n; ++j) a(i, j) -= f * a(k, j);
    }
  }
  return lu;
}

SignedLogDet LuDecomposition::LogDet() const {
  if (singular_) return {};
  SignedLogDet out{parity_, 0.0};
  for (size_t i = 0; i < lu_.rows(); ++i) {
    const double u = lu_(i, i);
    if (u < 0) out.sign = -out.sign;
    out.logabs += std::log(std::abs(u));
  }
  return out;
}

Vector LuDecomposition::Solve(std::span<const double> b) const {
  const size_t n = lu_.rows();
  Vector x(n);
  for (size_t i = 0; i < n; ++i) x[i] = b[pivot_[i]];
  for (size_t i = 0; i < n; ++i) {
    for (size_t j = 0; j < i; ++j) x[i] -= lu_(i, j) * x[j];
  }
  for (size_t i = n; i-- > 0;) {
    for (size_t j = i + 1; j < n; ++j) x[i] -= lu_(i, j) * x[j];
    x[i] /= lu_(i, i);
  }
  return x;
}

Vector LuDecomposition::SolveTransposed(std::span<const double> b) const {
  // m^T = U^T L^T P, so solve U^T y = b, L^T w = y, then x = P^T w.
  const size_t n = lu_.rows();
  Vector y(b.begin(), b.end());
  for (size_t i = 0; i < n; ++i) {
    for (size_t j = 0; j < i; ++j) y[i] -= lu_(j, i) * y[j];
    y[i] /= lu_(i, i);
  }
  for (size_t i = n; i-- > 0;) {
    for (size_t j = i + 1; j < n; ++j) y[i] -= lu_(j, i) * y[j];
  }
  Vector x(n);
  for (size_t i = 0; i < n; ++i) x[pivot_[i]] = y[i];
  return x;
}

Matrix LuDecomposition::Inverse() const {
  const size_t n = lu_.rows();
  Matrix inv(n, n);
  Vector e(n, 0.0);
  for (size_t c = 0; c < n; ++c) {
    e[c] = 1.0;
    Vector col = Solve(e);
    e[c] = 0.0;
    for (size_t r = 0; r < n; ++r) inv(r, c) = col[r];
  }
  return inv;
}

absl::StatusOr<SignedLogDet> Slogdet(const Matrix& m) {
  absl::StatusOr<LuDecomposition> lu = LuDecomposition::Factor(m);
  if (!lu.ok()) return lu.status();
  return lu->LogDet();
}

absl::StatusOr<Vector> GradOracle(const ScalarFunction& f,
                                  std::span<const double> theta, double step) {
  if (!(step > 0.0)) {
    return absl::InvalidArgumentError("finite-difference step must be > 0");
  }
  Vector probe(theta.begin(), theta.end());
  Vector grad(theta.size());
  for (size_t i = 0; i < theta.size(); ++i) {
    const double saved = probe[i];
    probe[i] = saved + step;
    const double up = f(probe);
    probe[i] = saved - step;
    const double down = f(probe);
    probe[i] = saved;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      return absl::InvalidArgumentError(
          absl::StrFormat("non-finite function value probing coordinate %d", i));
    }
    grad[i] = (up - down) / (2.0 * step);
  }
  return grad;
}

double MaxRelativeError(std::span<const double> a, std::span<const double> b,
                        double floor) {
  double max_diff = 0.0;
  double scale = floor;
  for (size_t i = 0; i < a.size(); ++i) {
    max_diff = std::max(max_diff, std::abs(a[i] - b[i]));
    scale = std::max(scale, std::abs(b[i]));
  }
  return max_diff / scale;
}

namespace {
std::atomic<int> g_worker_threads{1};
}  // namespace

void SetWorkerThreads(int threads) {
  g_worker_threads.store(std::max(1, threads));
}

int WorkerThreads() { return g_worker_threads.load(); }

void ParallelFor(size_t n, const std::function<void(size_t)>& fn) {
  const size_t workers =
      std::min(n, static_cast<size_t>(std::max(1, WorkerThreads())));
  if (workers <= 1) {
    for (size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  const size_t chunk = (n + workers - 1) / workers;
  for (size_t w = 0; w < workers; ++w) {
    const size_t begin = w * chunk;
    const size_t end = std::min(n, begin + chunk);
    pool.emplace_back([&fn, begin, end] {
      for (size_t i = begin; i < end; ++i) fn(i);
    });
  }
  for (std::thread& t : pool) t.join();
}

}  // namespace powerlearn
