# Copyright 2026 The PowerLearn Authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#      http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
"""Pure-Python xoshiro256** matching powerlearn::Rng, for golden values."""

MASK = (1 << 64) - 1


def splitmix64(state):
  state = (state + 0x9E3779B97F4A7C15) & MASK
  z = state
  z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK
  z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK
  return state, z ^ (z >> 31)


def rotl(x, k):
  return ((x << k) | (x >> (64 - k))) & MASK


class Rng:

  def __init__(self, seed):
    state = seed & MASK
    self.s = []
    for _ in range(4):
      state, v = splitmix64(state)
      self.s.append(v)

  def next_u64(self):
    s = self.s
    result = (rotl((s[1] * 5) & MASK, 7) * 9) & MASK
    t = (s[1] << 17) & MASK
    s[2] ^= s[0]
    s[3] ^= s[1]
    s[1] ^= s[2]
    s[0] ^= s[3]
    s[2] ^= t
    s[3] = rotl(s[3], 45)
    return result

  def uniform(self, lo=0.0, hi=1.0):
    u = (self.next_u64() >> 11) * 2.0**-53
    return lo + (hi - lo) * u

  def below(self, n):
    limit = MASK - (MASK % n)
    x = self.next_u64()
    while x >= limit:
      x = self.next_u64()
    return x % n
