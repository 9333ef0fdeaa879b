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
"""Naive majority-vote evaluation of a stored forest dump.

Usage: python3 forest_vote.py MODEL.plsrv DATA.csv
Prints the accuracy of hard voting (ties to the lower class id).
"""

import csv
import struct
import sys
import zlib


def parse(blob):
  assert blob.startswith(b"PLSRV1\n")
  body, crc = blob[:-4], struct.unpack("<I", blob[-4:])[0]
  assert zlib.crc32(body) & 0xFFFFFFFF == crc
  head, payload = body[len(b"PLSRV1\n"):].split(b"\n\n", 1)
  kv = dict(line.split("=", 1) for line in head.decode().split("\n"))
  assert kv["kind"] == "forest"
  off = 8 * int(kv["base"])
  trees = []
  for _ in range(int(kv["trees"])):
    (count,) = struct.unpack_from("<Q", payload, off)
    off += 8
    nodes = []
    for _ in range(count):
      feat, thr, left, right, vs = struct.unpack_from("<qdqqQ", payload, off)
      off += 40
      value = struct.unpack_from("<%dd" % vs, payload, off)
      off += 8 * vs
      nodes.append((feat, thr, left, right, value))
    trees.append(nodes)
  assert off == len(payload)
  return int(kv["classes"]), trees


def leaf(nodes, x):
  i = 0
  while nodes[i][0] >= 0:
    feat, thr, left, right, _ = nodes[i]
    i = left if x[feat] <= thr else right
  return nodes[i][4]


def argmax(v):
  best = 0
  for i in range(1, len(v)):
    if v[i] > v[best]:
      best = i
  return best


def main():
  classes, trees = parse(open(sys.argv[1], "rb").read())
  rows = list(csv.reader(open(sys.argv[2])))[1:]
  correct = 0
  for r in rows:
    x = [float(r[0]), float(r[1])]
    votes = [0] * classes
    for t in trees:
      votes[argmax(leaf(t, x))] += 1
    correct += argmax(votes) == int(r[2])
  print(repr(correct / len(rows)))


if __name__ == "__main__":
  main()
