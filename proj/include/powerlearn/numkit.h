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

// Dense f64 linear algebra used throughout the library. Everything is
// row-major and value-semantic; there is no expression templating.

#ifndef POWERLEARN_NUMKIT_H_
#define POWERLEARN_NUMKIT_H_

#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "absl/status/statusor.h"

namespace powerlearn {

using Vector = std::vector<double>;

class Matrix {
 public:
  Matrix() = default;
  Matrix(size_t rows, size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  // Takes ownership of `data`, which must hold rows*cols entries.
  static absl::StatusOr<Matrix> FromData(size_t rows, size_t cols,
                                         std::vector<double> data);
  static Matrix Identity(size_t n);

  size_t rows() const { return rows_; }
  size_t cols() const { return cols_; }
  size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(size_t r, size_t c) { return data_[r * cols_ + c]; }
  double operator()(size_t r, size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(size_t r) {
    return {data_.data() + r * cols_, cols_};
  }
  std::span<const double> row(size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  Matrix Transposed() const;
  bool AllFinite() const;

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  size_t rows_ = 0;
  size_t cols_ = 0;
  std::vector<double> data_;
};

Matrix MatMul(const Matrix& a, const Matrix& b);
// a * x
Vector MatVec(const Matrix& a, std::span<const double> x);
// a^T * x
Vector MatTVec(const Matrix& a, std::span<const double> x);
// out += scale * u v^T
void AddOuter(Matrix& out, std::span<const double> u, std::span<const double> v,
              double scale = 1.0);

double Dot(std::span<const double> a, std::span<const double> b);
double Norm2(std::span<const double> a);
double FrobeniusNorm(const Matrix& m);
// Largest singular value, via power iteration on m^T m.
double SpectralNorm(const Matrix& m);

// Gathers the listed rows of `m` into a new matrix.
Matrix SelectRows(const Matrix& m, std::span<const size_t> rows);

struct SignedLogDet {
  int sign = 0;  // -1, 0 or +1
  double logabs = -std::numeric_limits<double>::infinity();
};

// LU factorization with partial pivoting. An exactly singular input is not
// an error: the factorization reports sign 0 and logabs -inf so callers can
// decide how to recover.
class LuDecomposition {
 public:
  static absl::StatusOr<LuDecomposition> Factor(const Matrix& m);

  bool singular() const { return singular_; }
  SignedLogDet LogDet() const;
  // Solves m x = b. Undefined for singular factorizations.
  Vector Solve(std::span<const double> b) const;
  // Solves m^T x = b.
  Vector SolveTransposed(std::span<const double> b) const;
  Matrix Inverse() const;

 private:
  LuDecomposition() = default;

  Matrix lu_;
  std::vector<size_t> pivot_;
  int parity_ = 1;
  bool singular_ = false;
};

absl::StatusOr<SignedLogDet> Slogdet(const Matrix& m);

// Central-difference gradient of `f` at `theta`. Returns an error if f is not
// finite at any probe point.
using ScalarFunction = std::function<double(std::span<const double>)>;
absl::StatusOr<Vector> GradOracle(const ScalarFunction& f,
                                  std::span<const double> theta,
                                  double step = 1e-5);

// max_i |a_i - b_i| / max(max_i |b_i|, floor). `b` is the reference.
double MaxRelativeError(std::span<const double> a, std::span<const double> b,
                        double floor = 1e-8);

// Runs fn(i) for i in [0, n) on up to `threads` workers using fixed
// contiguous chunks. fn must only write to per-index state.
void ParallelFor(size_t n, const std::function<void(size_t)>& fn);
void SetWorkerThreads(int threads);
int WorkerThreads();

}  // namespace powerlearn

#endif  // POWERLEARN_NUMKIT_H_
