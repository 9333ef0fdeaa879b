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

// Tabular ingestion: CSV parsing, schema-driven encoding and the seeded
// 80/20 train/validation split.
//
// Numeric columns are standardized with statistics from the training rows
// only; categorical columns become one-hot groups. Rows with a missing cell
// (empty or "?") are dropped and counted, while cells that are present but
// unparseable are an error naming the row.

#ifndef POWERLEARN_DATAIO_H_
#define POWERLEARN_DATAIO_H_

#include <cstdint>
#include <string>
#include <vector>

#include "absl/status/statusor.h"
#include "powerlearn/numkit.h"

namespace powerlearn {

enum class ColumnRole { kNumeric, kCategorical, kLabel, kIgnore };

struct ColumnSpec {
  std::string name;
  ColumnRole role = ColumnRole::kNumeric;
};

// The user-facing schema document: a JSON object mapping column name to one
// of "numeric", "categorical", "label" or "ignore".
struct SchemaSpec {
  std::vector<ColumnSpec> columns;

  static absl::StatusOr<SchemaSpec> FromJson(const std::string& text);
  std::string ToJson() const;
};

struct NumericColumn {
  std::string name;
  size_t offset = 0;  // column in the encoded matrix
  double mean = 0.0;
  double stddev = 1.0;
};

struct CategoricalGroup {
  std::string name;
  size_t offset = 0;                // first one-hot column
  std::vector<std::string> levels;  // sorted, unique
};

struct FeatureSchema {
  std::string label_name;
  std::vector<std::string> label_levels;  // class id = index
  std::vector<NumericColumn> numerics;
  std::vector<CategoricalGroup> groups;
  size_t dim = 0;

  // Canonical JSON; its FNV-1a hash is the schema hash carried by bundles.
  std::string ToJson() const;
  uint32_t Hash() const;
};

struct TabularDataset {
  Matrix x;       // n x dim, encoded and standardized
  Matrix raw;     // n x dim, encoded but not standardized
  std::vector<int> y;
  FeatureSchema schema;
  std::vector<size_t> train;
  std::vector<size_t> validation;
  size_t dropped_rows = 0;

  size_t size() const { return y.size(); }
  size_t num_classes() const { return schema.label_levels.size(); }
};

// A parsed CSV: header plus string cells.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

absl::StatusOr<CsvTable> ParseCsv(const std::string& text);
absl::StatusOr<CsvTable> ReadCsvFile(const std::string& path);
std::string FormatCsv(const CsvTable& table);

// Encodes a table according to `spec` and splits it with `seed`.
absl::StatusOr<TabularDataset> EncodeTable(const CsvTable& table,
                                           const SchemaSpec& spec,
                                           uint64_t seed);

absl::StatusOr<TabularDataset> LoadCsv(const std::string& path,
                                       const SchemaSpec& spec, uint64_t seed);

// Re-draws the split (a pure function of seed and n) and re-standardizes.
absl::StatusOr<TabularDataset> Split(TabularDataset ds, uint64_t seed);

// The permutation behind Split: first round(0.8 n) entries are training rows.
absl::StatusOr<std::vector<size_t>> SplitPermutation(size_t n, uint64_t seed);

uint32_t Fnv1a32(std::string_view bytes);

}  // namespace powerlearn

#endif  // POWERLEARN_DATAIO_H_
