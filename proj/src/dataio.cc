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

#include "powerlearn/dataio.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "absl/status/status.h"
#include "absl/strings/str_cat.h"
#include "absl/strings/str_format.h"
#include "json.hpp"
#include "powerlearn/rng.h"

namespace powerlearn {

using ordered_json = nlohmann::ordered_json;

namespace {

const char* RoleName(ColumnRole r) {
  switch (r) {
    case ColumnRole::kNumeric:
      return "numeric";
    case ColumnRole::kCategorical:
      return "categorical";
    case ColumnRole::kLabel:
      return "label";
    case ColumnRole::kIgnore:
      return "ignore";
  }
  return "numeric";
}

bool IsMissing(const std::string& cell) { return cell.empty() || cell == "?"; }

bool ParseDouble(const std::string& s, double& out) {
  const char* begin = s.data();
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(begin, end, out);
  return ec == std::errc() && ptr == end && std::isfinite(out);
}

}  // namespace

uint32_t Fnv1a32(std::string_view bytes) {
  uint32_t h = 2166136261u;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 16777619u;
  }
  return h;
}

absl::StatusOr<SchemaSpec> SchemaSpec::FromJson(const std::string& text) {
  ordered_json doc = ordered_json::parse(text, nullptr, false);
  if (doc.is_discarded() || !doc.is_object()) {
    return absl::InvalidArgumentError(
        "schema spec must be a JSON object mapping column name to role");
  }
  SchemaSpec spec;
  int labels = 0;
  for (auto it = doc.begin(); it != doc.end(); ++it) {
    if (!it.value().is_string()) {
      return absl::InvalidArgumentError("role of column '" + it.key() +
                                        "' must be a string");
    }
    const std::string role = it.value().get<std::string>();
    ColumnSpec c{it.key(), ColumnRole::kNumeric};
    if (role == "numeric") {
      c.role = ColumnRole::kNumeric;
    } else if (role == "categorical") {
      c.role = ColumnRole::kCategorical;
    } else if (role == "label") {
      c.role = ColumnRole::kLabel;
      ++labels;
    } else if (role == "ignore") {
      c.role = ColumnRole::kIgnore;
    } else {
      return absl::InvalidArgumentError("unknown role '" + role +
                                        "' for column '" + it.key() + "'");
    }
    spec.columns.push_back(std::move(c));
  }
  if (labels != 1) {
    return absl::InvalidArgumentError(
        absl::StrFormat("schema needs exactly one label column, found %d",
                        labels));
  }
  return spec;
}

std::string SchemaSpec::ToJson() const {
  ordered_json doc = ordered_json::object();
  for (const ColumnSpec& c : columns) doc[c.name] = RoleName(c.role);
  return doc.dump();
}

std::string FeatureSchema::ToJson() const {
  ordered_json doc;
  doc["label"] = label_name;
  doc["label_levels"] = label_levels;
  doc["dim"] = dim;
  ordered_json nums = ordered_json::array();
  for (const NumericColumn& n : numerics) {
    nums.push_back({{"name", n.name}, {"offset", n.offset}});
  }
  doc["numeric"] = nums;
  ordered_json cats = ordered_json::array();
  for (const CategoricalGroup& g : groups) {
    cats.push_back(
        {{"name", g.name}, {"offset", g.offset}, {"levels", g.levels}});
  }
  doc["categorical"] = cats;
  return doc.dump();
}

uint32_t FeatureSchema::Hash() const { return Fnv1a32(ToJson()); }

absl::StatusOr<CsvTable> ParseCsv(const std::string& text) {
  CsvTable table;
  std::vector<std::string> record;
  std::string cell;
  bool in_quotes = false;
  bool any = false;
  size_t line = 1;
  auto finish_record = [&]() -> absl::Status {
    record.push_back(std::move(cell));
    cell.clear();
    if (table.header.empty()) {
      table.header = std::move(record);
    } else if (record.size() == 1 && record[0].empty()) {
      // blank line
    } else {
      if (record.size() != table.header.size()) {
        return absl::InvalidArgumentError(absl::StrFormat(
            "line %d: %d cells, header has %d", line, record.size(),
            table.header.size()));
      }
      table.rows.push_back(std::move(record));
    }
    record.clear();
    return absl::OkStatus();
  };
  for (size_t i = 0; i < text.size(); ++i) {
    const char ch = text[i];
    any = true;
    if (in_quotes) {
      if (ch == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          cell.push_back('"');
          ++i;
        } else {
          in_quotes = false;
        }
      } else if (ch == '\n') {
        return absl::InvalidArgumentError(
            absl::StrFormat("line %d: embedded newline in quoted cell", line));
      } else {
        cell.push_back(ch);
      }
      continue;
    }
    if (ch == '"' && cell.empty()) {
      in_quotes = true;
    } else if (ch == ',') {
      record.push_back(std::move(cell));
      cell.clear();
    } else if (ch == '\n') {
      if (!cell.empty() && cell.back() == '\r') cell.pop_back();
      if (absl::Status s = finish_record(); !s.ok()) return s;
      ++line;
      any = false;
    } else {
      cell.push_back(ch);
    }
  }
  if (in_quotes) return absl::InvalidArgumentError("unterminated quoted cell");
  if (any) {
    if (!cell.empty() && cell.back() == '\r') cell.pop_back();
    if (absl::Status s = finish_record(); !s.ok()) return s;
  }
  if (table.header.empty()) return absl::InvalidArgumentError("empty CSV file");
  return table;
}

absl::StatusOr<CsvTable> ReadCsvFile(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return absl::NotFoundError("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  absl::StatusOr<CsvTable> table = ParseCsv(ss.str());
  if (!table.ok()) {
    return absl::Status(table.status().code(),
                        absl::StrCat(path, ": ", table.status().message()));
  }
  return table;
}

std::string FormatCsv(const CsvTable& table) {
  auto quote = [](const std::string& c) {
    if (c.find_first_of(",\"") == std::string::npos) return c;
    std::string out = "\"";
    for (char ch : c) {
      if (ch == '"') out.push_back('"');
      out.push_back(ch);
    }
    out.push_back('"');
    return out;
  };
  std::string out;
  auto emit = [&](const std::vector<std::string>& rec) {
    for (size_t i = 0; i < rec.size(); ++i) {
      if (i) out.push_back(',');
      out += quote(rec[i]);
    }
    out.push_back('\n');
  };
  emit(table.header);
  for (const auto& r : table.rows) emit(r);
  return out;
}

absl::StatusOr<std::vector<size_t>> SplitPermutation(size_t n, uint64_t seed) {
  if (n < 5) {
    return absl::InvalidArgumentError(
        absl::StrFormat("need at least 5 rows to split, have %d", n));
  }
  std::vector<size_t> perm(n);
  for (size_t i = 0; i < n; ++i) perm[i] = i;
  Rng rng(seed);
  rng.Shuffle(std::span<size_t>(perm));
  return perm;
}

absl::StatusOr<TabularDataset> Split(TabularDataset ds, uint64_t seed) {
  const size_t n = ds.size();
  absl::StatusOr<std::vector<size_t>> perm = SplitPermutation(n, seed);
  if (!perm.ok()) return perm.status();
  const size_t n_train = static_cast<size_t>(std::lround(0.8 * n));
  ds.train.assign(perm->begin(), perm->begin() + n_train);
  ds.validation.assign(perm->begin() + n_train, perm->end());
  std::sort(ds.train.begin(), ds.train.end());
  std::sort(ds.validation.begin(), ds.validation.end());

  ds.x = ds.raw;
  for (NumericColumn& col : ds.schema.numerics) {
    double sum = 0.0;
    for (size_t r : ds.train) sum += ds.raw(r, col.offset);
    col.mean = sum / static_cast<double>(ds.train.size());
    double ss = 0.0;
    for (size_t r : ds.train) {
      const double d = ds.raw(r, col.offset) - col.mean;
      ss += d * d;
    }
    col.stddev = std::sqrt(ss / static_cast<double>(ds.train.size()));
    if (!(col.stddev > 0.0)) col.stddev = 1.0;
    for (size_t r = 0; r < n; ++r) {
      ds.x(r, col.offset) = (ds.raw(r, col.offset) - col.mean) / col.stddev;
    }
  }
  return ds;
}

absl::StatusOr<TabularDataset> EncodeTable(const CsvTable& table,
                                           const SchemaSpec& spec,
                                           uint64_t seed) {
  std::map<std::string, size_t> position;
  for (size_t i = 0; i < table.header.size(); ++i) position[table.header[i]] = i;
  struct Bound {
    ColumnSpec spec;
    size_t csv_index;
  };
  std::vector<Bound> cols;
  int label_col = -1;
  for (const ColumnSpec& c : spec.columns) {
    auto it = position.find(c.name);
    if (it == position.end()) {
      return absl::InvalidArgumentError("missing column '" + c.name + "'");
    }
    if (c.role == ColumnRole::kLabel) label_col = static_cast<int>(it->second);
    cols.push_back({c, it->second});
  }
  if (label_col < 0) return absl::InvalidArgumentError("no label column");

  // Keep rows with every used cell present, checking numerics parse.
  std::vector<const std::vector<std::string>*> kept;
  size_t dropped = 0;
  for (size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    bool missing = false;
    for (const Bound& b : cols) {
      if (b.spec.role == ColumnRole::kIgnore) continue;
      const std::string& cell = row[b.csv_index];
      if (IsMissing(cell)) {
        missing = true;
        continue;
      }
      double v;
      if (b.spec.role == ColumnRole::kNumeric && !ParseDouble(cell, v)) {
        return absl::InvalidArgumentError(absl::StrFormat(
            "row %d: column '%s': cannot parse '%s' as a number", r + 1,
            b.spec.name, cell));
      }
    }
    if (missing) {
      ++dropped;
    } else {
      kept.push_back(&row);
    }
  }
  if (kept.empty()) return absl::InvalidArgumentError("no usable rows");

  TabularDataset ds;
  ds.dropped_rows = dropped;
  FeatureSchema& schema = ds.schema;
  size_t offset = 0;
  struct Encoder {
    size_t csv_index;
    ColumnRole role;
    size_t offset;
    std::map<std::string, size_t> level_index;
  };
  std::vector<Encoder> encoders;
  for (const Bound& b : cols) {
    if (b.spec.role == ColumnRole::kNumeric) {
      schema.numerics.push_back({b.spec.name, offset, 0.0, 1.0});
      encoders.push_back({b.csv_index, b.spec.role, offset, {}});
      offset += 1;
    } else if (b.spec.role == ColumnRole::kCategorical) {
      std::set<std::string> levels;
      for (const auto* row : kept) levels.insert((*row)[b.csv_index]);
      CategoricalGroup g{b.spec.name, offset, {levels.begin(), levels.end()}};
      Encoder e{b.csv_index, b.spec.role, offset, {}};
      for (size_t i = 0; i < g.levels.size(); ++i) e.level_index[g.levels[i]] = i;
      offset += g.levels.size();
      schema.groups.push_back(std::move(g));
      encoders.push_back(std::move(e));
    } else if (b.spec.role == ColumnRole::kLabel) {
      schema.label_name = b.spec.name;
    }
  }
  schema.dim = offset;
  if (schema.dim == 0) return absl::InvalidArgumentError("no feature columns");

  // Label levels: numeric order when every level is a number.
  std::set<std::string> label_set;
  for (const auto* row : kept) label_set.insert((*row)[label_col]);
  std::vector<std::string> labels(label_set.begin(), label_set.end());
  bool all_numeric = true;
  for (const std::string& l : labels) {
    double v;
    all_numeric = all_numeric && ParseDouble(l, v);
  }
  if (all_numeric) {
    std::stable_sort(labels.begin(), labels.end(),
                     [](const std::string& a, const std::string& b) {
                       double x, y;
                       ParseDouble(a, x);
                       ParseDouble(b, y);
                       return x < y;
                     });
  }
  schema.label_levels = labels;
  std::map<std::string, int> label_index;
  for (size_t i = 0; i < labels.size(); ++i) label_index[labels[i]] = static_cast<int>(i);

  ds.raw = Matrix(kept.size(), schema.dim);
  ds.y.resize(kept.size());
  for (size_t r = 0; r < kept.size(); ++r) {
    const auto& row = *kept[r];
    for (const Encoder& e : encoders) {
      const std::string& cell = row[e.csv_index];
      if (e.role == ColumnRole::kNumeric) {
        double v = 0.0;
        ParseDouble(cell, v);
        ds.raw(r, e.offset) = v;
      } else {
        ds.raw(r, e.offset + e.level_index.at(cell)) = 1.0;
      }
    }
    ds.y[r] = label_index.at(row[label_col]);
  }
  return Split(std::move(ds), seed);
}

absl::StatusOr<TabularDataset> LoadCsv(const std::string& path,
                                       const SchemaSpec& spec, uint64_t seed) {
  absl::StatusOr<CsvTable> table = ReadCsvFile(path);
  if (!table.ok()) return table.status();
  if (table->rows.empty()) {
    return absl::InvalidArgumentError(path + ": no data rows");
  }
  return EncodeTable(*table, spec, seed);
}

}  // namespace powerlearn
