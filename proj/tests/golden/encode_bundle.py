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
"""Writes the seed-42 release bundle golden file by hand from the layout.

Usage: python3 encode_bundle.py OUT.plb
"""

import struct
import sys
import zlib

from reference_rng import Rng

N, DIM = 5, 3


def fnv1a32(data):
  h = 0x811C9DC5
  for b in data:
    h ^= b
    h = (h * 0x01000193) & 0xFFFFFFFF
  return h


def main():
  rng = Rng(42)
  emb = [rng.uniform(-2.0, 2.0) for _ in range(N * DIM)]
  labels = [rng.below(3) for _ in range(N)]
  header = [
      ("n", str(N)),
      ("dim", str(DIM)),
      ("eps_target", "%.17g" % 1.5),
      ("delta", "%.17g" % 0.05),
      ("lambda_adj", "%.17g" % 1.0),
      ("schema_hash", str(fnv1a32(b"powerlearn"))),
  ]
  out = bytearray(b"PLRN1\n")
  for k, v in header:
    out += ("%s=%s\n" % (k, v)).encode("utf-8")
  out += b"\n"
  for v in emb:
    out += struct.pack("<d", v)
  for v in labels:
    out += struct.pack("<q", v)
  out += struct.pack("<I", zlib.crc32(bytes(out)) & 0xFFFFFFFF)
  with open(sys.argv[1], "wb") as f:
    f.write(out)


if __name__ == "__main__":
  main()
