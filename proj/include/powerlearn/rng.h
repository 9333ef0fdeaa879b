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

#ifndef POWERLEARN_RNG_H_
#define POWERLEARN_RNG_H_

#include <cstdint>
#include <span>

namespace powerlearn {

// xoshiro256** seeded by four successive splitmix64 outputs of the seed.
//
// The stream is fixed by construction so golden files stay portable:
//   NextU64()  raw xoshiro256** output
//   Uniform()  (NextU64() >> 11) * 2^-53, in [0, 1)
//   Normal()   Box-Muller on two Uniform() draws, u1 mapped to (0, 1]; the
//              second variate is cached and returned by the next call
//   Below(n)   rejection sampling on NextU64() to remove modulo bias
// Standard-library distributions are deliberately not used because their
// output differs between implementations.
class Rng {
 public:
  explicit Rng(uint64_t seed);

  uint64_t NextU64();
  double Uniform();
  double Uniform(double lo, double hi) { return lo + (hi - lo) * Uniform(); }
  double Normal();
  double Normal(double mean, double stddev) { return mean + stddev * Normal(); }
  // Uniform integer in [0, n). n must be > 0.
  uint64_t Below(uint64_t n);

  template <typename T>
  void Shuffle(std::span<T> items) {
    for (size_t i = items.size(); i > 1; --i) {
      const size_t j = static_cast<size_t>(Below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

  // Independent child stream; a pure function of this generator's seed and
  // `stream`, not of how many draws have been taken.
  Rng Fork(uint64_t stream) const;

 private:
  uint64_t seed_;
  uint64_t s_[4];
  bool has_spare_ = false;
  double spare_ = 0.0;
};

uint64_t SplitMix64(uint64_t& state);

}  // namespace powerlearn

#endif  // POWERLEARN_RNG_H_
