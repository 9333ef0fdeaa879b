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

#include "powerlearn/synthetic.h"

#include <cmath>
#include <string>

#include "absl/strings/str_format.h"
#include "powerlearn/rng.h"

namespace powerlearn {
namespace {

std::string Cell(double v) { return absl::StrFormat("%.17g", v); }

}  // namespace

SyntheticTable TwoGaussian2d(size_t n, uint64_t seed) {
  SyntheticTable out;
  out.table.header = {"x1", "x2", "label"};
  out.spec.columns = {{"x1", ColumnRole::kNumeric},
                      {"x2", ColumnRole::kNumeric},
                      {"label", ColumnRole::kLabel}};
  Rng rng(seed);
  for (size_t i = 0; i < n; ++i) {
    const int label = static_cast<int>(rng.Below(2));
    const double cx = label == 0 ? -1.5 : 1.5;
    const double x1 = rng.Normal(cx, 1.0);
    const double x2 = rng.Normal(0.0, 1.0);
    out.table.rows.push_back({Cell(x1), Cell(x2), std::to_string(label)});
  }
  return out;
}

SyntheticTable GaussianNd(size_t n, size_t d, double sigma, uint64_t seed) {
  SyntheticTable out;
  for (size_t j = 0; j < d; ++j) {
    const std::string name = absl::StrFormat("x%d", j + 1);
    out.table.header.push_back(name);
    out.spec.columns.push_back({name, ColumnRole::kNumeric});
  }
  out.table.header.push_back("label");
  out.spec.columns.push_back({"label", ColumnRole::kLabel});
  Rng rng(seed);
  for (size_t i = 0; i < n; ++i) {
    std::vector<std::string> row;
    double first = 0.0;
    for (size_t j = 0; j < d; ++j) {
      const double v = rng.Normal(0.0, sigma);
      if (j == 0) first = v;
      row.push_back(Cell(v));
    }
    row.push_back(first > 0.0 ? "1" : "0");
    out.table.rows.push_back(std::move(row));
  }
  return out;
}

SyntheticTable MixedBenchmark(size_t n, uint64_t seed) {
  static constexpr double kCentre[3][2] = {{-2.0, 0.0}, {2.0, 0.0}, {0.0, 2.0}};
  static constexpr const char* kLevel[3] = {"a", "b", "c"};
  SyntheticTable out;
  out.table.header = {"cat", "x1", "x2", "label"};
  out.spec.columns = {{"cat", ColumnRole::kCategorical},
                      {"x1", ColumnRole::kNumeric},
                      {"x2", ColumnRole::kNumeric},
                      {"label", ColumnRole::kLabel}};
  Rng rng(seed);
  for (size_t i = 0; i < n; ++i) {
    const size_t c = static_cast<size_t>(rng.Below(3));
    const double x1 = rng.Normal(kCentre[c][0], 1.0);
    const double x2 = rng.Normal(kCentre[c][1], 1.0);
    const double r = std::hypot(x1 - kCentre[c][0], x2 - kCentre[c][1]);
    out.table.rows.push_back(
        {kLevel[c], Cell(x1), Cell(x2), r > 1.2 ? "1" : "0"});
  }
  return out;
}

SyntheticTable MultiCategoricalBenchmark(size_t n, uint64_t seed) {
  static constexpr const char* kLevel[5] = {"a", "b", "c", "d", "e"};
  SyntheticTable out;
  out.table.header = {"c1", "c2", "c3", "c4", "x1", "x2", "label"};
  for (size_t k = 0; k < 4; ++k) {
    out.spec.columns.push_back(
        {out.table.header[k], ColumnRole::kCategorical});
  }
  out.spec.columns.push_back({"x1", ColumnRole::kNumeric});
  out.spec.columns.push_back({"x2", ColumnRole::kNumeric});
  out.spec.columns.push_back({"label", ColumnRole::kLabel});
  Rng rng(seed);
  for (size_t i = 0; i < n; ++i) {
    std::vector<std::string> row;
    int sum = 0;
    for (size_t k = 0; k < 4; ++k) {
      const int level = static_cast<int>(rng.Below(5));
      sum += level;
      row.push_back(kLevel[level]);
    }
    const double x1 = rng.Normal(0.0, 1.0);
    const double x2 = rng.Normal(0.0, 1.0);
    row.push_back(Cell(x1));
    row.push_back(Cell(x2));
    row.push_back(sum + x1 > 8.0 ? "1" : "0");
    out.table.rows.push_back(std::move(row));
  }
  return out;
}

}  // namespace powerlearn
