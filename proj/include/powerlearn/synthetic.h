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

// Seeded synthetic tables. Each generator returns raw CSV cells plus the
// matching schema spec so the output goes through the normal encoder.

#ifndef POWERLEARN_SYNTHETIC_H_
#define POWERLEARN_SYNTHETIC_H_

#include <cstdint>

#include "powerlearn/dataio.h"

namespace powerlearn {

struct SyntheticTable {
  CsvTable table;
  SchemaSpec spec;
};

// Two unit-variance Gaussians in 2-d centred at (-1.5, 0) and (1.5, 0);
// the label is the component.
SyntheticTable TwoGaussian2d(size_t n, uint64_t seed);

// Isotropic N(0, sigma^2 I_d); label is 1 when the first coordinate is
// positive.
SyntheticTable GaussianNd(size_t n, size_t d, double sigma, uint64_t seed);

// A categorical column cat in {a, b, c} and two numerics drawn from
// N(mu_cat, I) with mu_a = (-2, 0), mu_b = (2, 0), mu_c = (0, 2). The label
// is 1 when the point lies farther than 1.2 from its category centre.
SyntheticTable MixedBenchmark(size_t n, uint64_t seed);

// Four independent categorical columns c1..c4, each uniform over {a..e},
// and two N(0, 1) numerics x1, x2 (d = 22 after encoding). The label is 1
// when the sum of the level indices plus x1 exceeds 8.
SyntheticTable MultiCategoricalBenchmark(size_t n, uint64_t seed);

}  // namespace powerlearn

#endif  // POWERLEARN_SYNTHETIC_H_
