#!/usr/bin/env python3
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
"""Merges the UCI Adult `adult.data` and `adult.test` files into one CSV.

Missing cells ("?") become empty so the loader drops those rows. Test-file
labels carry a trailing period which is stripped.

Usage: prepare_adult.py <dir with adult.data and adult.test> <out.csv>
"""

import csv
import sys

COLUMNS = [
    "age", "workclass", "fnlwgt", "education", "education_num",
    "marital_status", "occupation", "relationship", "race", "sex",
    "capital_gain", "capital_loss", "hours_per_week", "native_country",
    "income",
]


def rows(path):
  with open(path) as f:
    for line in f:
      line = line.strip()
      if not line or line.startswith("|"):
        continue
      cells = [c.strip() for c in line.split(",")]
      if len(cells) != len(COLUMNS):
        continue
      cells = ["" if c == "?" else c for c in cells]
      cells[-1] = cells[-1].rstrip(".")
      yield cells


def main():
  src, out = sys.argv[1], sys.argv[2]
  with open(out, "w", newline="") as f:
    w = csv.writer(f, lineterminator="\n")
    w.writerow(COLUMNS)
    for name in ("adult.data", "adult.test"):
      for r in rows(f"{src}/{name}"):
        w.writerow(r)


if __name__ == "__main__":
  main()
