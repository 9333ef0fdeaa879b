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


#include "powerlearn/pipeline.h"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <initializer_list>
#include <limits>
#include <map>
#include <set>
#include <thread>
#include <utility>

#include "absl/strings/cord.h"
#include "absl/strings/numbers.h"
#include "absl/strings/str_cat.h"
#include "absl/strings/str_format.h"
#include "absl/strings/str_join.h"
#include "absl/strings/str_split.h"
#include "json.hpp"
#include "powerlearn/bytes.h"
#include "powerlearn/calibrator.h"
#include "powerlearn/dataio.h"
#include "powerlearn/protocol.h"
#include "powerlearn/reconbound.h"

namespace powerlearn {
namespace {

using Json = nlohmann::ordered_json;
namespace fs = std::filesystem;

constexpr char kExitPayload[] = "type.powerlearn/exit-class";
constexpr char kHashColumn[] = "config_hash";

LogLevel g_log_level = LogLevel::kInfo;

absl::Status ConfigError(const std::string& msg) {
  return Classify(absl::InvalidArgumentError(msg), ExitClass::kConfig);
}

absl::Status DataError(const std::string& msg) {
  return Classify(absl::InvalidArgumentError(msg), ExitClass::kData);
}

// Data-side failures keep their message; divergence is recognised by code.
absl::Status AsData(absl::Status s) {
  if (s.ok()) return s;
  if (s.code() == absl::StatusCode::kAborted) {
    return Classify(std::move(s), ExitClass::kDivergence);
  }
  return Classify(std::move(s), ExitClass::kData);
}

uint64_t Fnv1a64(std::string_view bytes) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string Digest(std::span<const uint8_t> bytes) {
  return absl::StrFormat(
      "%016x", Fnv1a64(std::string_view(
                   reinterpret_cast<const char*>(bytes.data()), bytes.size())));
}

absl::StatusOr<std::string> ReadText(const std::string& path) {
  absl::StatusOr<Bytes> b = ReadFileBytes(path);
  if (!b.ok()) return b.status();
  return std::string(b->begin(), b->end());
}

absl::Status WriteText(const std::string& path, const std::string& text) {
  return WriteFileBytes(
      path, std::span<const uint8_t>(
                reinterpret_cast<const uint8_t*>(text.data()), text.size()));
}

std::string Resolve(const std::string& base, const std::string& p) {
  if (p.empty() || base.empty() || fs::path(p).is_absolute()) return p;
  return (fs::path(base) / p).lexically_normal().string();
}

// ---- JSON section reader with unknown-key rejection ----

class Section {
 public:
  Section(const nlohmann::json& j, std::string where)
      : j_(j), where_(std::move(where)) {}

  absl::Status Allow(std::initializer_list<const char*> keys) const {
    if (!j_.is_object()) return ConfigError(where_ + " must be an object");
    std::set<std::string> ok(keys.begin(), keys.end());
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!ok.count(it.key())) {
        return ConfigError(absl::StrCat("unknown key '", Key(it.key()), "'"));
      }
    }
    return absl::OkStatus();
  }

  bool Has(const char* k) const { return j_.contains(k); }
  const nlohmann::json& Raw(const char* k) const { return j_.at(k); }
  std::string Key(const std::string& k) const {
    return where_.empty() ? k : where_ + "." + k;
  }

  absl::Status Number(const char* k, double& out) const {
    if (!Has(k)) return absl::OkStatus();
    const nlohmann::json& v = j_.at(k);
    if (!v.is_number()) return ConfigError(Key(k) + " must be a number");
    out = v.get<double>();
    if (!std::isfinite(out)) return ConfigError(Key(k) + " must be finite");
    return absl::OkStatus();
  }

  absl::Status Count(const char* k, size_t& out) const {
    if (!Has(k)) return absl::OkStatus();
    const nlohmann::json& v = j_.at(k);
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<int64_t>() >= 0)) {
      return ConfigError(Key(k) + " must be a non-negative integer");
    }
    out = v.get<size_t>();
    return absl::OkStatus();
  }

  absl::Status Flag(const char* k, bool& out) const {
    if (!Has(k)) return absl::OkStatus();
    if (!j_.at(k).is_boolean()) return ConfigError(Key(k) + " must be a boolean");
    out = j_.at(k).get<bool>();
    return absl::OkStatus();
  }

  absl::Status Text(const char* k, std::string& out) const {
    if (!Has(k)) return absl::OkStatus();
    if (!j_.at(k).is_string()) return ConfigError(Key(k) + " must be a string");
    out = j_.at(k).get<std::string>();
    return absl::OkStatus();
  }

  absl::Status Counts(const char* k, std::vector<size_t>& out) const {
    if (!Has(k)) return absl::OkStatus();
    const nlohmann::json& v = j_.at(k);
    if (!v.is_array()) return ConfigError(Key(k) + " must be an array");
    out.clear();
    for (const nlohmann::json& e : v) {
      if (!e.is_number_integer() || e.get<int64_t>() <= 0) {
        return ConfigError(Key(k) + " entries must be positive integers");
      }
      out.push_back(e.get<size_t>());
    }
    return absl::OkStatus();
  }

  absl::Status Numbers(const char* k, std::vector<double>& out) const {
    if (!Has(k)) return absl::OkStatus();
    const nlohmann::json& v = j_.at(k);
    if (!v.is_array()) return ConfigError(Key(k) + " must be an array");
    out.clear();
    for (const nlohmann::json& e : v) {
      if (!e.is_number()) return ConfigError(Key(k) + " entries must be numbers");
      out.push_back(e.get<double>());
    }
    return absl::OkStatus();
  }

 private:
  const nlohmann::json& j_;
  std::string where_;
};

#define PL_RETURN_IF_ERROR(expr)          \
  do {                                    \
    absl::Status _st = (expr);            \
    if (!_st.ok()) return _st;            \
  } while (0)

#define PL_ASSIGN_OR_RETURN_IMPL(tmp, lhs, expr) \
  auto tmp = (expr);                             \
  if (!tmp.ok()) return tmp.status();            \
  lhs = *std::move(tmp)
#define PL_CONCAT_INNER(a, b) a##b
#define PL_CONCAT(a, b) PL_CONCAT_INNER(a, b)
#define PL_ASSIGN_OR_RETURN(lhs, expr) \
  PL_ASSIGN_OR_RETURN_IMPL(PL_CONCAT(_so_, __LINE__), lhs, expr)

}  // namespace

// ---- exit classes and logging ----

absl::Status Classify(absl::Status s, ExitClass c) {
  if (s.ok() || s.GetPayload(kExitPayload).has_value()) return s;
  s.SetPayload(kExitPayload, absl::Cord(std::to_string(static_cast<int>(c))));
  return s;
}

ExitClass ExitClassOf(const absl::Status& s) {
  if (s.ok()) return ExitClass::kOk;
  const auto p = s.GetPayload(kExitPayload);
  if (p.has_value()) {
    int v = 0;
    if (absl::SimpleAtoi(std::string(*p), &v) && v >= 1 && v <= 5) {
      return static_cast<ExitClass>(v);
    }
  }
  switch (s.code()) {
    case absl::StatusCode::kAborted:
      return ExitClass::kDivergence;
    case absl::StatusCode::kUnavailable:
    case absl::StatusCode::kDeadlineExceeded:
    case absl::StatusCode::kDataLoss:
      return ExitClass::kProtocol;
    case absl::StatusCode::kInvalidArgument:
    case absl::StatusCode::kNotFound:
    case absl::StatusCode::kOutOfRange:
    case absl::StatusCode::kFailedPrecondition:
      return ExitClass::kData;
    default:
      return ExitClass::kOther;
  }
}

int ExitCode(const absl::Status& s) { return static_cast<int>(ExitClassOf(s)); }

absl::StatusOr<LogLevel> ParseLogLevel(const std::string& name) {
  if (name == "error") return LogLevel::kError;
  if (name == "info") return LogLevel::kInfo;
  if (name == "debug") return LogLevel::kDebug;
  return ConfigError("POWERMECH_LOG must be error, info or debug, got '" +
                     name + "'");
}

void SetLogLevel(LogLevel level) { g_log_level = level; }

void Log(LogLevel level, const std::string& message) {
  if (level > g_log_level) return;
  static constexpr const char* kTag[] = {"error", "info", "debug"};
  std::fprintf(stderr, "[%s] %s\n", kTag[static_cast<int>(level)],
               message.c_str());
}

// ---- RunConfig ----

absl::StatusOr<RunConfig> RunConfig::FromJson(const std::string& text,
                                              const std::string& base_dir) {
  nlohmann::json root;
  try {
    root = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    return ConfigError(absl::StrCat("config is not valid JSON: ", e.what()));
  }
  RunConfig c;
  c.base_dir = base_dir;
  Section top(root, "");
  PL_RETURN_IF_ERROR(top.Allow(
      {"seed", "paths", "client", "density", "release", "server", "attack"}));
  size_t seed = c.seed;
  PL_RETURN_IF_ERROR(top.Count("seed", seed));
  c.seed = seed;

  if (top.Has("paths")) {
    Section s(top.Raw("paths"), "paths");
    PL_RETURN_IF_ERROR(s.Allow({"csv", "schema", "out"}));
    PL_RETURN_IF_ERROR(s.Text("csv", c.csv));
    PL_RETURN_IF_ERROR(s.Text("schema", c.schema));
    PL_RETURN_IF_ERROR(s.Text("out", c.out));
    c.out = Resolve(base_dir, c.out);
  }
  if (top.Has("client")) {
    Section s(top.Raw("client"), "client");
    PL_RETURN_IF_ERROR(s.Allow({"variant", "p", "hidden", "utility_hidden",
                                "lambda", "optimizer", "lr", "batch", "steps",
                                "output_scale", "tanh_width",
                                "project_weights"}));
    std::string variant = VariantName(c.client.variant);
    PL_RETURN_IF_ERROR(s.Text("variant", variant));
    absl::StatusOr<PrivatizerVariant> v = ParseVariant(variant);
    if (!v.ok()) return ConfigError(std::string(v.status().message()));
    c.client.variant = *v;
    size_t p = static_cast<size_t>(c.client.power);
    PL_RETURN_IF_ERROR(s.Count("p", p));
    if (p > 64) return ConfigError("client.p must be at most 64");
    c.client.power = static_cast<int>(p);
    PL_RETURN_IF_ERROR(s.Counts("hidden", c.client.privatizer_hidden));
    PL_RETURN_IF_ERROR(s.Counts("utility_hidden", c.client.utility_hidden));
    PL_RETURN_IF_ERROR(s.Number("lambda", c.client.lambda));
    std::string opt = OptimizerName(c.client.optimizer);
    PL_RETURN_IF_ERROR(s.Text("optimizer", opt));
    absl::StatusOr<OptimizerKind> o = ParseOptimizer(opt);
    if (!o.ok()) return ConfigError(std::string(o.status().message()));
    c.client.optimizer = *o;
    PL_RETURN_IF_ERROR(s.Number("lr", c.client.learning_rate));
    PL_RETURN_IF_ERROR(s.Count("batch", c.client.batch_size));
    PL_RETURN_IF_ERROR(s.Count("steps", c.client.steps));
    PL_RETURN_IF_ERROR(s.Number("output_scale", c.client.output_scale));
    PL_RETURN_IF_ERROR(s.Count("tanh_width", c.client.tanh_width));
    PL_RETURN_IF_ERROR(s.Flag("project_weights", c.client.project_weights));
  }
  if (top.Has("density")) {
    Section s(top.Raw("density"), "density");
    PL_RETURN_IF_ERROR(s.Allow({"bandwidth", "alpha"}));
    if (s.Has("bandwidth")) {
      const nlohmann::json& b = s.Raw("bandwidth");
      if (b.is_string() && b.get<std::string>() == "scott") {
        c.client.bandwidth = 0.0;
      } else if (b.is_number() && b.get<double>() > 0.0 &&
                 std::isfinite(b.get<double>())) {
        c.client.bandwidth = b.get<double>();
      } else {
        return ConfigError(
            "density.bandwidth must be \"scott\" or a positive number");
      }
    }
    PL_RETURN_IF_ERROR(s.Number("alpha", c.client.alpha));
  }
  if (top.Has("release")) {
    Section s(top.Raw("release"), "release");
    PL_RETURN_IF_ERROR(s.Allow({"eps_target", "lambda_adj", "eps_grid"}));
    PL_RETURN_IF_ERROR(s.Number("eps_target", c.eps_target));
    PL_RETURN_IF_ERROR(s.Number("lambda_adj", c.lambda_adj));
    PL_RETURN_IF_ERROR(s.Numbers("eps_grid", c.eps_grid));
  }
  if (top.Has("server")) {
    Section s(top.Raw("server"), "server");
    PL_RETURN_IF_ERROR(s.Allow({"kind", "hidden", "lr", "batch", "steps",
                                "trees", "forest_depth", "min_leaf", "rounds",
                                "gbt_depth", "shrinkage", "l2", "max_bins"}));
    std::string kind = ServerKindName(c.server_kind);
    PL_RETURN_IF_ERROR(s.Text("kind", kind));
    absl::StatusOr<ServerKind> k = ParseServerKind(kind);
    if (!k.ok()) return ConfigError(std::string(k.status().message()));
    c.server_kind = *k;
    PL_RETURN_IF_ERROR(s.Counts("hidden", c.server.mlp_hidden));
    PL_RETURN_IF_ERROR(s.Number("lr", c.server.learning_rate));
    PL_RETURN_IF_ERROR(s.Count("batch", c.server.batch_size));
    PL_RETURN_IF_ERROR(s.Count("steps", c.server.steps));
    PL_RETURN_IF_ERROR(s.Count("trees", c.server.trees));
    PL_RETURN_IF_ERROR(s.Count("forest_depth", c.server.forest_depth));
    PL_RETURN_IF_ERROR(s.Count("min_leaf", c.server.min_leaf));
    PL_RETURN_IF_ERROR(s.Count("rounds", c.server.rounds));
    PL_RETURN_IF_ERROR(s.Count("gbt_depth", c.server.gbt_depth));
    PL_RETURN_IF_ERROR(s.Number("shrinkage", c.server.shrinkage));
    PL_RETURN_IF_ERROR(s.Number("l2", c.server.l2));
    PL_RETURN_IF_ERROR(s.Count("max_bins", c.server.max_bins));
  }
  if (top.Has("attack")) {
    Section s(top.Raw("attack"), "attack");
    PL_RETURN_IF_ERROR(s.Allow({"hidden", "lr", "batch", "steps", "fisher_rows"}));
    PL_RETURN_IF_ERROR(s.Counts("hidden", c.attack.hidden));
    PL_RETURN_IF_ERROR(s.Number("lr", c.attack.learning_rate));
    PL_RETURN_IF_ERROR(s.Count("batch", c.attack.batch_size));
    PL_RETURN_IF_ERROR(s.Count("steps", c.attack.steps));
    PL_RETURN_IF_ERROR(s.Count("fisher_rows", c.attack_fisher_rows));
  }
  c.client.seed = c.seed;
  PL_RETURN_IF_ERROR(c.Validate());
  return c;
}

absl::StatusOr<RunConfig> RunConfig::Load(const std::string& path) {
  absl::StatusOr<std::string> text = ReadText(path);
  if (!text.ok()) {
    return ConfigError(absl::StrCat("cannot read config: ", text.status().message()));
  }
  return FromJson(*text, fs::path(path).parent_path().string());
}

absl::Status RunConfig::Validate() const {
  if (csv.empty()) return ConfigError("paths.csv is required");
  if (schema.empty()) return ConfigError("paths.schema is required");
  if (out.empty()) return ConfigError("paths.out must not be empty");
  const TrainConfig& t = client;
  if (t.power < 1) return ConfigError("client.p must be >= 1");
  if (!(t.lambda >= 0.0)) return ConfigError("client.lambda must be >= 0");
  if (!(t.learning_rate > 0.0)) return ConfigError("client.lr must be > 0");
  if (t.batch_size == 0) return ConfigError("client.batch must be >= 1");
  if (t.steps == 0) return ConfigError("client.steps must be >= 1");
  if (!(t.output_scale >= 0.0)) {
    return ConfigError("client.output_scale must be >= 0");
  }
  if (t.utility_hidden.empty()) {
    return ConfigError("client.utility_hidden needs at least one layer");
  }
  if (!(t.alpha > 0.0 && t.alpha < 1.0)) {
    return ConfigError("density.alpha must lie in (0, 1)");
  }
  if (!(eps_target > 0.0)) return ConfigError("release.eps_target must be > 0");
  if (!(lambda_adj > 0.0)) return ConfigError("release.lambda_adj must be > 0");
  for (double e : eps_grid) {
    if (!(e > 0.0) || !std::isfinite(e)) {
      return ConfigError("release.eps_grid entries must be positive");
    }
  }
  if (absl::Status s = server.Validate(); !s.ok()) {
    return ConfigError(absl::StrCat("server: ", s.message()));
  }
  if (server.steps == 0) return ConfigError("server.steps must be >= 1");
  if (absl::Status s = attack.Validate(); !s.ok()) {
    return ConfigError(absl::StrCat("attack: ", s.message()));
  }
  if (attack.steps == 0) return ConfigError("attack.steps must be >= 1");
  if (attack_fisher_rows < 2) return ConfigError("attack.fisher_rows must be >= 2");
  return absl::OkStatus();
}

namespace {

Json ConfigJson(const RunConfig& c, bool with_out) {
  Json j;
  j["seed"] = c.seed;
  Json paths;
  paths["csv"] = c.csv;
  paths["schema"] = c.schema;
  if (with_out) paths["out"] = c.out;
  j["paths"] = paths;
  const TrainConfig& t = c.client;
  j["client"] = {{"variant", VariantName(t.variant)},
                 {"p", t.power},
                 {"hidden", t.privatizer_hidden},
                 {"utility_hidden", t.utility_hidden},
                 {"lambda", t.lambda},
                 {"optimizer", OptimizerName(t.optimizer)},
                 {"lr", t.learning_rate},
                 {"batch", t.batch_size},
                 {"steps", t.steps},
                 {"output_scale", t.output_scale},
                 {"tanh_width", t.tanh_width},
                 {"project_weights", t.project_weights}};
  Json density;
  if (t.bandwidth > 0.0) {
    density["bandwidth"] = t.bandwidth;
  } else {
    density["bandwidth"] = "scott";
  }
  density["alpha"] = t.alpha;
  j["density"] = density;
  j["release"] = {{"eps_target", c.eps_target},
                  {"lambda_adj", c.lambda_adj},
                  {"eps_grid", c.eps_grid}};
  const ServerConfig& s = c.server;
  j["server"] = {{"kind", ServerKindName(c.server_kind)},
                 {"hidden", s.mlp_hidden},
                 {"lr", s.learning_rate},
                 {"batch", s.batch_size},
                 {"steps", s.steps},
                 {"trees", s.trees},
                 {"forest_depth", s.forest_depth},
                 {"min_leaf", s.min_leaf},
                 {"rounds", s.rounds},
                 {"gbt_depth", s.gbt_depth},
                 {"shrinkage", s.shrinkage},
                 {"l2", s.l2},
                 {"max_bins", s.max_bins}};
  j["attack"] = {{"hidden", c.attack.hidden},
                 {"lr", c.attack.learning_rate},
                 {"batch", c.attack.batch_size},
                 {"steps", c.attack.steps},
                 {"fisher_rows", c.attack_fisher_rows}};
  return j;
}

}  // namespace

std::string RunConfig::ToJson() const { return ConfigJson(*this, true).dump(2); }

std::string RunConfig::Hash() const {
  return absl::StrFormat("%016x", Fnv1a64(ConfigJson(*this, false).dump()));
}

std::string RunConfig::CsvPath() const { return Resolve(base_dir, csv); }
std::string RunConfig::SchemaPath() const { return Resolve(base_dir, schema); }
std::string RunConfig::OutPath(const std::string& name) const {
  return (fs::path(out) / name).string();
}

absl::StatusOr<std::pair<std::string, int>> ParseEndpoint(
    const std::string& text) {
  const size_t colon = text.rfind(':');
  int port = 0;
  if (colon == std::string::npos || colon == 0 ||
      !absl::SimpleAtoi(text.substr(colon + 1), &port) || port < 0 ||
      port > 65535) {
    return ConfigError("endpoint must look like host:port, got '" + text + "'");
  }
  return std::make_pair(text.substr(0, colon), port);
}

// ---- artifacts ----

namespace {

Json Stamp(const RunConfig& c) {
  Json j;
  j["config_hash"] = c.Hash();
  return j;
}

absl::Status EnsureOutDir(const RunConfig& c) {
  std::error_code ec;
  fs::create_directories(c.out, ec);
  if (ec) return DataError("cannot create " + c.out + ": " + ec.message());
  return absl::OkStatus();
}

absl::Status WriteJson(const RunConfig& c, const char* name, const Json& j) {
  absl::Status s = WriteText(c.OutPath(name), j.dump(2) + "\n");
  if (!s.ok()) return AsData(s);
  Log(LogLevel::kDebug, absl::StrCat("wrote ", c.OutPath(name)));
  return absl::OkStatus();
}

absl::StatusOr<nlohmann::json> ParseJsonFile(const std::string& path) {
  absl::StatusOr<std::string> text = ReadText(path);
  if (!text.ok()) {
    return DataError(absl::StrCat("missing artifact: ", text.status().message()));
  }
  try {
    return nlohmann::json::parse(*text);
  } catch (const nlohmann::json::exception& e) {
    return DataError(absl::StrCat(path, " is not valid JSON: ", e.what()));
  }
}

// Reads an artifact written by an earlier stage of the same configuration.
absl::StatusOr<nlohmann::json> ReadJson(const RunConfig& c, const char* name) {
  absl::StatusOr<nlohmann::json> j = ParseJsonFile(c.OutPath(name));
  if (!j.ok()) return j.status();
  const std::string want = c.Hash();
  const std::string got = j->value(kHashColumn, std::string());
  if (got != want) {
    return ConfigError(absl::StrFormat(
        "%s was written by config %s, current config is %s", name, got, want));
  }
  return j;
}

// Prefixes every CSV line with the hash column.
std::string HashedCsv(const std::string& hash, const std::string& csv) {
  std::string out;
  bool header = true;
  for (absl::string_view line : absl::StrSplit(csv, '\n', absl::SkipEmpty())) {
    absl::StrAppend(&out, header ? kHashColumn : hash, ",", line, "\n");
    header = false;
  }
  return out;
}

struct CsvRows {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

// Parses a hashed CSV artifact and strips the hash column.
absl::StatusOr<CsvRows> ReadHashedCsv(const std::string& path,
                                      const std::string& want_hash) {
  absl::StatusOr<std::string> text = ReadText(path);
  if (!text.ok()) {
    return DataError(absl::StrCat("missing artifact: ", text.status().message()));
  }
  CsvRows out;
  bool first = true;
  for (absl::string_view line : absl::StrSplit(*text, '\n', absl::SkipEmpty())) {
    std::vector<std::string> cells = absl::StrSplit(line, ',');
    if (first) {
      if (cells.empty() || cells[0] != kHashColumn) {
        return DataError(path + " has no config_hash column");
      }
      out.header.assign(cells.begin() + 1, cells.end());
      first = false;
      continue;
    }
    if (cells.size() != out.header.size() + 1) {
      return DataError(path + ": ragged row");
    }
    if (!want_hash.empty() && cells[0] != want_hash) {
      return ConfigError(absl::StrFormat(
          "%s was written by config %s, current config is %s", path, cells[0],
          want_hash));
    }
    out.rows.emplace_back(cells.begin() + 1, cells.end());
  }
  if (first) return DataError(path + " is empty");
  return out;
}

absl::StatusOr<TabularDataset> LoadRunData(const RunConfig& c) {
  absl::StatusOr<std::string> schema_text = ReadText(c.SchemaPath());
  if (!schema_text.ok()) return AsData(schema_text.status());
  absl::StatusOr<SchemaSpec> spec = SchemaSpec::FromJson(*schema_text);
  if (!spec.ok()) return AsData(spec.status());
  absl::StatusOr<TabularDataset> ds = LoadCsv(c.CsvPath(), *spec, c.seed);
  if (!ds.ok()) return AsData(ds.status());
  return ds;
}

// Loads the data and checks it still matches what ingest saw.
absl::StatusOr<TabularDataset> LoadCheckedData(const RunConfig& c) {
  PL_ASSIGN_OR_RETURN(nlohmann::json meta, ReadJson(c, artifact::kDataset));
  PL_ASSIGN_OR_RETURN(TabularDataset ds, LoadRunData(c));
  if (meta.value("schema_hash", uint32_t{0}) != ds.schema.Hash() ||
      meta.value("rows", size_t{0}) != ds.size()) {
    return DataError("input data changed since ingest; re-run ingest");
  }
  return ds;
}

std::vector<int> Labels(const TabularDataset& ds,
                        std::span<const size_t> rows) {
  std::vector<int> y;
  y.reserve(rows.size());
  for (size_t r : rows) y.push_back(ds.y[r]);
  return y;
}

absl::StatusOr<PrivatizerParams> LoadPrivatizer(const RunConfig& c) {
  PL_ASSIGN_OR_RETURN(nlohmann::json meta, ReadJson(c, artifact::kClient));
  absl::StatusOr<Bytes> blob = ReadFileBytes(c.OutPath(artifact::kPrivatizer));
  if (!blob.ok()) return AsData(blob.status());
  if (Digest(*blob) != meta.value("privatizer_digest", std::string())) {
    return DataError("privatizer.bin does not match client.json");
  }
  absl::StatusOr<PrivatizerParams> p = DeserializePrivatizer(*blob);
  if (!p.ok()) return AsData(p.status());
  return p;
}

constexpr const char* kRecordColumns =
    "index,privatizable,eps_prime,lower,upper,eps_final,alpha,fhat,log_fhat,"
    "halfwidth,clamped,floored";

std::string RecordsCsv(std::span<const CalibrationRecord> recs) {
  std::string out = absl::StrCat(kRecordColumns, "\n");
  for (const CalibrationRecord& r : recs) {
    absl::StrAppend(&out, r.index, ",", r.privatizable ? 1 : 0, ",",
                    FormatDouble(r.eps_prime), ",", FormatDouble(r.lower), ",",
                    FormatDouble(r.upper), ",", FormatDouble(r.eps_final), ",",
                    FormatDouble(r.alpha), ",", FormatDouble(r.fhat), ",",
                    FormatDouble(r.log_fhat), ",", FormatDouble(r.halfwidth),
                    ",", r.clamped ? 1 : 0, ",", r.floored ? 1 : 0, "\n");
  }
  return out;
}

absl::StatusOr<std::vector<CalibrationRecord>> ReadRecords(
    const RunConfig& c, const char* name) {
  PL_ASSIGN_OR_RETURN(CsvRows csv, ReadHashedCsv(c.OutPath(name), c.Hash()));
  if (absl::StrJoin(csv.header, ",") != kRecordColumns) {
    return DataError(std::string(name) + " has unexpected columns");
  }
  std::vector<CalibrationRecord> out;
  out.reserve(csv.rows.size());
  for (const std::vector<std::string>& row : csv.rows) {
    CalibrationRecord r;
    int priv = 0, clamped = 0, floored = 0;
    bool ok = absl::SimpleAtoi(row[0], &r.index) &&
              absl::SimpleAtoi(row[1], &priv) &&
              absl::SimpleAtod(row[2], &r.eps_prime) &&
              absl::SimpleAtod(row[3], &r.lower) &&
              absl::SimpleAtod(row[4], &r.upper) &&
              absl::SimpleAtod(row[5], &r.eps_final) &&
              absl::SimpleAtod(row[6], &r.alpha) &&
              absl::SimpleAtod(row[7], &r.fhat) &&
              absl::SimpleAtod(row[8], &r.log_fhat) &&
              absl::SimpleAtod(row[9], &r.halfwidth) &&
              absl::SimpleAtoi(row[10], &clamped) &&
              absl::SimpleAtoi(row[11], &floored);
    if (!ok) return DataError(std::string(name) + ": unparseable row");
    r.privatizable = priv != 0;
    r.clamped = clamped != 0;
    r.floored = floored != 0;
    out.push_back(r);
  }
  return out;
}

absl::StatusOr<DensityModel> TrainDensity(const RunConfig& c,
                                          const TabularDataset& ds) {
  absl::StatusOr<DensityModel> dm = DensityModel::Create(
      SelectRows(ds.x, ds.train), c.client.bandwidth, c.client.alpha);
  if (!dm.ok()) return AsData(dm.status());
  return dm;
}

Json EvalJson(const EvalReport& r) { return Json::parse(r.ToJson()); }

double Seconds(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

}  // namespace

// ---- stages ----

absl::Status IngestStage(const RunConfig& c) {
  PL_RETURN_IF_ERROR(EnsureOutDir(c));
  PL_ASSIGN_OR_RETURN(TabularDataset ds, LoadRunData(c));
  Json j = Stamp(c);
  j["csv"] = c.csv;
  j["rows"] = ds.size();
  j["dropped_rows"] = ds.dropped_rows;
  j["dim"] = ds.schema.dim;
  j["classes"] = ds.num_classes();
  j["train_rows"] = ds.train.size();
  j["validation_rows"] = ds.validation.size();
  j["schema_hash"] = ds.schema.Hash();
  j["schema"] = Json::parse(ds.schema.ToJson());
  Log(LogLevel::kInfo,
      absl::StrFormat("ingest: %d rows (%d dropped), d = %d, %d classes",
                      ds.size(), ds.dropped_rows, ds.schema.dim,
                      ds.num_classes()));
  return WriteJson(c, artifact::kDataset, j);
}

absl::Status TrainClientStage(const RunConfig& c) {
  PL_RETURN_IF_ERROR(EnsureOutDir(c));
  PL_ASSIGN_OR_RETURN(TabularDataset ds, LoadCheckedData(c));
  if (c.client.batch_size > ds.train.size()) {
    return ConfigError(absl::StrFormat(
        "client.batch %d exceeds the %d training rows", c.client.batch_size,
        ds.train.size()));
  }
  const auto t0 = std::chrono::steady_clock::now();
  absl::StatusOr<ClientModel> m = TrainClient(ds, c.client);
  if (!m.ok()) return AsData(m.status());
  Log(LogLevel::kInfo, absl::StrFormat("train-client: %d steps in %.1fs",
                                       c.client.steps, Seconds(t0)));
  const Bytes blob = SerializePrivatizer(m->privatizer);
  if (absl::Status s = WriteFileBytes(c.OutPath(artifact::kPrivatizer), blob);
      !s.ok()) {
    return AsData(s);
  }
  const std::string hash = c.Hash();
  if (absl::Status s = WriteText(c.OutPath(artifact::kHistory),
                                 HashedCsv(hash, m->history.ToCsv()));
      !s.ok()) {
    return AsData(s);
  }
  const std::vector<TrainRecord>& h = m->history.records;
  Json j = Stamp(c);
  j["privatizer_digest"] = Digest(blob);
  j["privatizer_parameters"] = m->privatizer.ParameterCount();
  j["steps"] = h.size();
  j["first_lp"] = h.front().lp;
  j["final_lp"] = h.back().lp;
  j["first_lu"] = h.front().lu;
  j["final_lu"] = h.back().lu;
  j["skipped_samples"] = m->history.skipped_samples;
  Log(LogLevel::kInfo, absl::StrFormat("train-client: L_P %.4g -> %.4g",
                                       h.front().lp, h.back().lp));
  return WriteJson(c, artifact::kClient, j);
}

absl::Status CalibrateStage(const RunConfig& c) {
  PL_ASSIGN_OR_RETURN(TabularDataset ds, LoadCheckedData(c));
  PL_ASSIGN_OR_RETURN(PrivatizerParams priv, LoadPrivatizer(c));
  PL_ASSIGN_OR_RETURN(DensityModel dm, TrainDensity(c, ds));
  const auto t0 = std::chrono::steady_clock::now();
  absl::StatusOr<std::vector<CalibrationRecord>> train =
      Calibrate(priv, dm, SelectRows(ds.x, ds.train), ds.train);
  if (!train.ok()) return AsData(train.status());
  absl::StatusOr<std::vector<CalibrationRecord>> held =
      Calibrate(priv, dm, SelectRows(ds.x, ds.validation), ds.validation);
  if (!held.ok()) return AsData(held.status());
  Log(LogLevel::kInfo,
      absl::StrFormat("calibrate: %d + %d rows in %.1fs (h = %.4g)",
                      train->size(), held->size(), Seconds(t0), dm.bandwidth()));
  const std::string hash = c.Hash();
  if (absl::Status s = WriteText(c.OutPath(artifact::kCalibration),
                                 HashedCsv(hash, RecordsCsv(*train)));
      !s.ok()) {
    return AsData(s);
  }
  return AsData(WriteText(c.OutPath(artifact::kCalibrationHeldOut),
                          HashedCsv(hash, RecordsCsv(*held))));
}

namespace {

struct Released {
  std::vector<CalibrationRecord> records;
  ReleaseDecision decision;
  std::vector<size_t> rows;  // dataset row ids, in bundle order
};

absl::StatusOr<Released> DecideRelease(const RunConfig& c, double eps_target) {
  Released r;
  PL_ASSIGN_OR_RETURN(r.records, ReadRecords(c, artifact::kCalibration));
  r.decision = FilterRelease(r.records, eps_target, c.lambda_adj);
  r.decision.report.alpha = c.client.alpha;
  for (size_t pos : r.decision.released) r.rows.push_back(r.records[pos].index);
  return r;
}

absl::StatusOr<ReleaseBundle> BuildBundle(const RunConfig& c,
                                          const TabularDataset& ds,
                                          const PrivatizerParams& priv,
                                          const std::vector<size_t>& rows,
                                          double eps_target) {
  absl::StatusOr<PrivatizedRows> pr = PrivatizeRows(priv, SelectRows(ds.x, rows));
  if (!pr.ok()) return AsData(pr.status());
  if (pr->failures != 0) {
    return DataError("a released row could not be privatized");
  }
  std::vector<size_t> all(rows.size());
  for (size_t i = 0; i < all.size(); ++i) all[i] = i;
  absl::StatusOr<ReleaseBundle> b =
      MakeBundle(pr->z, Labels(ds, rows), all, eps_target, c.client.alpha,
                 c.lambda_adj, ds.schema.Hash());
  if (!b.ok()) return AsData(b.status());
  return b;
}

}  // namespace

absl::StatusOr<ReleaseSummary> ReleaseStage(const RunConfig& c) {
  PL_ASSIGN_OR_RETURN(TabularDataset ds, LoadCheckedData(c));
  PL_ASSIGN_OR_RETURN(PrivatizerParams priv, LoadPrivatizer(c));
  PL_ASSIGN_OR_RETURN(Released rel, DecideRelease(c, c.eps_target));
  PL_ASSIGN_OR_RETURN(std::vector<CalibrationRecord> held,
                      ReadRecords(c, artifact::kCalibrationHeldOut));
  PL_ASSIGN_OR_RETURN(ReleaseBundle bundle,
                      BuildBundle(c, ds, priv, rel.rows, c.eps_target));
  absl::StatusOr<Bytes> bytes = EncodeBundle(bundle);
  if (!bytes.ok()) return AsData(bytes.status());
  if (absl::Status s = WriteFileBytes(c.OutPath(artifact::kBundle), *bytes);
      !s.ok()) {
    return AsData(s);
  }
  const PrivacyReport& rep = rel.decision.report;
  if (rep.empty_release) {
    Log(LogLevel::kInfo,
        absl::StrFormat("WARNING: no sample meets eps_target %g; the bundle "
                        "is empty",
                        c.eps_target));
  }
  Json pj = Stamp(c);
  const Json rep_json = Json::parse(rep.ToJson());
  for (auto& [k, v] : rep_json.items()) pj[k] = v;
  HistogramSpec hist;
  std::vector<size_t> held_counts(hist.bins, 0);
  for (const CalibrationRecord& r : held) ++held_counts[hist.BinOf(r.eps_final)];
  pj["heldout_counts"] = held_counts;
  pj["heldout_total"] = held.size();
  PL_RETURN_IF_ERROR(WriteJson(c, artifact::kPrivacyReport, pj));

  Json j = Stamp(c);
  j["bundle"] = artifact::kBundle;
  j["bundle_digest"] = Digest(*bytes);
  j["bundle_bytes"] = bytes->size();
  j["rows"] = bundle.size();
  j["total"] = rep.total;
  j["eps_target"] = c.eps_target;
  j["lambda_adj"] = c.lambda_adj;
  j["delta"] = bundle.delta;
  j["dataset_eps"] = rep.dataset_eps;
  j["eps_dp"] = rep.dp.eps_dp;
  j["empty_release"] = rep.empty_release;
  j["schema_hash"] = bundle.schema_hash;
  PL_RETURN_IF_ERROR(WriteJson(c, artifact::kRelease, j));
  Log(LogLevel::kInfo,
      absl::StrFormat("release: %d of %d rows at eps_target %g "
                      "(dataset eps %.4g)",
                      bundle.size(), rep.total, c.eps_target, rep.dataset_eps));
  return ReleaseSummary{bundle.size(), rep.total, rep.dataset_eps};
}

namespace {

absl::StatusOr<Bytes> ReadReleasedBytes(const RunConfig& c) {
  PL_ASSIGN_OR_RETURN(nlohmann::json meta, ReadJson(c, artifact::kRelease));
  absl::StatusOr<Bytes> bytes = ReadFileBytes(c.OutPath(artifact::kBundle));
  if (!bytes.ok()) return AsData(bytes.status());
  if (Digest(*bytes) != meta.value("bundle_digest", std::string())) {
    return DataError("release.plb does not match release.json");
  }
  return bytes;
}

absl::Status StoreReceived(const RunConfig& c, const Received& got) {
  if (!got.bundle.ok()) {
    return Classify(
        absl::DataLossError(absl::StrCat("rejected bundle (",
                                         DecodeErrorName(DecodeErrorOf(got.bundle.status())),
                                         "): ", got.bundle.status().message())),
        ExitClass::kProtocol);
  }
  PL_RETURN_IF_ERROR(EnsureOutDir(c));
  if (absl::Status s = WriteFileBytes(c.OutPath(artifact::kReceived), got.bytes);
      !s.ok()) {
    return AsData(s);
  }
  Json j = Stamp(c);
  j["bundle"] = artifact::kReceived;
  j["bundle_digest"] = Digest(got.bytes);
  j["bundle_bytes"] = got.bytes.size();
  j["rows"] = got.bundle->size();
  j["eps_target"] = got.bundle->eps_target;
  j["schema_hash"] = got.bundle->schema_hash;
  Log(LogLevel::kInfo, absl::StrFormat("serve: received %d rows",
                                       got.bundle->size()));
  return WriteJson(c, "received.json", j);
}

}  // namespace

absl::Status SendStage(const RunConfig& c, const std::string& host, int port,
                       absl::Duration timeout) {
  PL_ASSIGN_OR_RETURN(Bytes bytes, ReadReleasedBytes(c));
  absl::Status s = SendBytes(host, port, bytes, timeout);
  if (!s.ok()) return Classify(s, ExitClass::kProtocol);
  Log(LogLevel::kInfo, absl::StrFormat("send: %d bytes acknowledged by %s:%d",
                                       bytes.size(), host, port));
  return absl::OkStatus();
}

absl::Status ServeStage(const RunConfig& c, const std::string& host, int port,
                        absl::Duration timeout) {
  absl::StatusOr<BundleServer> server = BundleServer::Listen(host, port);
  if (!server.ok()) return Classify(server.status(), ExitClass::kProtocol);
  Log(LogLevel::kInfo,
      absl::StrFormat("serve: listening on %s:%d", host, server->port()));
  absl::StatusOr<Received> got = server->Accept(timeout);
  if (!got.ok()) return Classify(got.status(), ExitClass::kProtocol);
  return StoreReceived(c, *got);
}

namespace {

// Client-side context that train-server and attack use when available.
struct ClientSide {
  TabularDataset ds;
  PrivatizerParams priv;
};

absl::StatusOr<std::optional<ClientSide>> MaybeClientSide(const RunConfig& c) {
  if (!fs::exists(c.OutPath(artifact::kClient)) ||
      !fs::exists(c.OutPath(artifact::kDataset))) {
    return std::optional<ClientSide>();
  }
  PL_ASSIGN_OR_RETURN(TabularDataset ds, LoadCheckedData(c));
  PL_ASSIGN_OR_RETURN(PrivatizerParams priv, LoadPrivatizer(c));
  return std::optional<ClientSide>(ClientSide{std::move(ds), std::move(priv)});
}

// Server accuracy on the privatized validation split.
absl::StatusOr<EvalReport> ValidationEval(const ServerModel& m,
                                          const ClientSide& cs) {
  absl::StatusOr<PrivatizedRows> pr =
      PrivatizeRows(cs.priv, SelectRows(cs.ds.x, cs.ds.validation));
  if (!pr.ok()) return AsData(pr.status());
  std::vector<size_t> keep;
  std::vector<int64_t> y;
  for (size_t i = 0; i < cs.ds.validation.size(); ++i) {
    if (!pr->ok[i]) continue;
    keep.push_back(i);
    y.push_back(cs.ds.y[cs.ds.validation[i]]);
  }
  absl::StatusOr<EvalReport> ev = Evaluate(m, SelectRows(pr->z, keep), y);
  if (!ev.ok()) return AsData(ev.status());
  return ev;
}

struct ServerOutcome {
  bool trained = false;
  ServerRun run;
  std::optional<EvalReport> validation;
};

absl::StatusOr<ServerOutcome> FitOnBundle(const RunConfig& c,
                                          const ReleaseBundle& bundle,
                                          const ClientSide* cs) {
  ServerOutcome out;
  if (bundle.size() == 0) return out;
  absl::StatusOr<ServerRun> run =
      TrainServer(bundle, c.server_kind, c.server, c.seed);
  if (!run.ok()) return AsData(run.status());
  out.trained = true;
  out.run = *std::move(run);
  if (cs != nullptr) {
    PL_ASSIGN_OR_RETURN(EvalReport ev, ValidationEval(out.run.model, *cs));
    out.validation = ev;
  }
  return out;
}

}  // namespace

absl::Status TrainServerStage(const RunConfig& c, const std::string& bundle_path) {
  PL_RETURN_IF_ERROR(EnsureOutDir(c));
  std::string path = bundle_path;
  if (path.empty()) {
    path = fs::exists(c.OutPath(artifact::kReceived))
               ? c.OutPath(artifact::kReceived)
               : c.OutPath(artifact::kBundle);
  }
  absl::StatusOr<Bytes> bytes = ReadFileBytes(path);
  if (!bytes.ok()) return AsData(bytes.status());
  absl::StatusOr<ReleaseBundle> bundle = DecodeBundle(*bytes);
  if (!bundle.ok()) return AsData(bundle.status());
  PL_ASSIGN_OR_RETURN(std::optional<ClientSide> cs, MaybeClientSide(c));
  if (cs.has_value() && bundle->schema_hash != cs->ds.schema.Hash()) {
    return DataError("bundle schema hash does not match the ingested schema");
  }
  const ClientSide* csp = cs.has_value() ? &*cs : nullptr;

  const auto t0 = std::chrono::steady_clock::now();
  PL_ASSIGN_OR_RETURN(ServerOutcome res, FitOnBundle(c, *bundle, csp));
  Json j = Stamp(c);
  j["kind"] = ServerKindName(c.server_kind);
  j["bundle_digest"] = Digest(*bytes);
  j["bundle_rows"] = bundle->size();
  j["eps_target"] = bundle->eps_target;
  j["trained"] = res.trained;
  if (!res.trained) {
    Log(LogLevel::kInfo, "WARNING: empty bundle; no server model was trained");
    j["single_class"] = nullptr;
    j["train"] = nullptr;
    j["test"] = nullptr;
    j["validation"] = nullptr;
  } else {
    const Bytes model = SerializeServerModel(res.run.model);
    if (absl::Status s = WriteFileBytes(c.OutPath(artifact::kServerModel), model);
        !s.ok()) {
      return AsData(s);
    }
    j["model_digest"] = Digest(model);
    j["single_class"] = res.run.single_class;
    j["train"] = EvalJson(res.run.train);
    j["test"] = EvalJson(res.run.test);
    j["validation"] =
        res.validation.has_value() ? EvalJson(*res.validation) : Json(nullptr);
    Log(LogLevel::kInfo,
        absl::StrFormat("train-server: %s on %d rows in %.1fs, test accuracy "
                        "%.4f",
                        ServerKindName(c.server_kind), bundle->size(),
                        Seconds(t0), res.run.test.accuracy));
    if (res.validation.has_value()) {
      Log(LogLevel::kInfo, absl::StrFormat("train-server: validation accuracy %.4f",
                                           res.validation->accuracy));
    }
  }
  PL_RETURN_IF_ERROR(WriteJson(c, artifact::kServerEval, j));

  if (c.eps_grid.empty() || csp == nullptr ||
      !fs::exists(c.OutPath(artifact::kCalibration))) {
    return absl::OkStatus();
  }
  Json points = Json::array();
  for (double eps : c.eps_grid) {
    PL_ASSIGN_OR_RETURN(Released rel, DecideRelease(c, eps));
    Json p;
    p["eps_target"] = eps;
    p["released"] = rel.rows.size();
    ServerOutcome o;
    if (!rel.rows.empty()) {
      PL_ASSIGN_OR_RETURN(ReleaseBundle b,
                          BuildBundle(c, csp->ds, csp->priv, rel.rows, eps));
      PL_ASSIGN_OR_RETURN(o, FitOnBundle(c, b, csp));
    }
    p["test_accuracy"] = o.trained ? Json(o.run.test.accuracy) : Json(nullptr);
    p["validation_accuracy"] = o.validation.has_value()
                                   ? Json(o.validation->accuracy)
                                   : Json(nullptr);
    Log(LogLevel::kDebug, absl::StrFormat("sweep: eps %g, %d rows", eps,
                                          rel.rows.size()));
    points.push_back(p);
  }
  Json s = Stamp(c);
  s["kind"] = ServerKindName(c.server_kind);
  s["points"] = points;
  return WriteJson(c, artifact::kServerSweep, s);
}

absl::Status AttackStage(const RunConfig& c) {
  PL_ASSIGN_OR_RETURN(TabularDataset ds, LoadCheckedData(c));
  PL_ASSIGN_OR_RETURN(PrivatizerParams priv, LoadPrivatizer(c));
  PL_ASSIGN_OR_RETURN(nlohmann::json rel_meta, ReadJson(c, artifact::kRelease));
  PL_ASSIGN_OR_RETURN(Released rel, DecideRelease(c, c.eps_target));
  PL_ASSIGN_OR_RETURN(Bytes bytes, ReadReleasedBytes(c));
  absl::StatusOr<ReleaseBundle> bundle = DecodeBundle(bytes);
  if (!bundle.ok()) return AsData(bundle.status());
  if (bundle->size() != rel.rows.size()) {
    return DataError("release.plb rows do not match the calibration records");
  }
  if (ds.validation.empty()) return DataError("no public (validation) rows");
  if (rel.rows.empty()) {
    Log(LogLevel::kInfo, "WARNING: empty release; nothing to attack");
    Json j = Stamp(c);
    j["eps_target"] = c.eps_target;
    j["released_rows"] = 0;
    j["public_rows"] = ds.validation.size();
    j["power_mech"] = nullptr;
    j["identity"] = nullptr;
    j["recon"] = nullptr;
    j["bound_respected"] = nullptr;
    return WriteJson(c, artifact::kAttack, j);
  }
  const Matrix pub = SelectRows(ds.x, ds.validation);
  const Matrix priv_x = SelectRows(ds.x, rel.rows);

  const auto t0 = std::chrono::steady_clock::now();
  absl::StatusOr<Attacker> pm = TrainAttacker(pub, priv, c.attack, c.seed);
  if (!pm.ok()) return AsData(pm.status());
  absl::StatusOr<Attacker> id =
      TrainAttacker(pub, MakeIdentity(ds.schema.dim), c.attack, c.seed);
  if (!id.ok()) return AsData(id.status());
  absl::StatusOr<AttackReport> r_pm =
      LeakageMetrics(pm->decoder, ds.schema, priv_x, bundle->embeddings);
  if (!r_pm.ok()) return AsData(r_pm.status());
  absl::StatusOr<AttackReport> r_id =
      LeakageMetrics(id->decoder, ds.schema, priv_x, priv_x);
  if (!r_id.ok()) return AsData(r_id.status());

  Json j = Stamp(c);
  j["eps_target"] = c.eps_target;
  j["released_rows"] = rel.rows.size();
  j["public_rows"] = pm->public_rows;
  j["power_mech"] = Json::parse(r_pm->ToJson());
  j["identity"] = Json::parse(r_id->ToJson());
  j["recon"] = nullptr;
  j["bound_respected"] = nullptr;
  if (rel.rows.size() >= 2) {
    PL_ASSIGN_OR_RETURN(DensityModel dm, TrainDensity(c, ds));
    std::vector<size_t> pick(rel.rows.size());
    for (size_t i = 0; i < pick.size(); ++i) pick[i] = i;
    Rng rng = Rng(c.seed).Fork(7);
    rng.Shuffle(std::span<size_t>(pick));
    pick.resize(std::min(pick.size(), c.attack_fisher_rows));
    std::sort(pick.begin(), pick.end());
    absl::StatusOr<double> fisher = FisherTrace(dm, SelectRows(priv_x, pick));
    if (!fisher.ok()) return AsData(fisher.status());
    absl::StatusOr<double> c1 = EstimateC1Gaussian(
        ds.schema.dim, dm.n(), dm.bandwidth(), 500, c.seed);
    if (!c1.ok()) return AsData(c1.status());
    ReconBoundInputs in;
    in.d = ds.schema.dim;
    in.eps = rel.decision.report.dataset_eps;
    in.fisher_trace = *fisher;
    in.n = dm.n();
    in.h = dm.bandwidth();
    in.c1 = *c1;
    absl::StatusOr<ReconReport> rr = MakeReconReport(in);
    if (!rr.ok()) return AsData(rr.status());
    j["recon"] = Json::parse(rr->ToJson());
    if (!rr->empirical.unbounded) {
      j["bound_respected"] = r_pm->sq_error >= rr->empirical.value;
    }
  }
  Log(LogLevel::kInfo,
      absl::StrFormat("attack: %.1fs, power-mech accuracy %.4f mse %.4g, "
                      "identity accuracy %.4f mse %.4g",
                      Seconds(t0), r_pm->categorical_accuracy, r_pm->mse,
                      r_id->categorical_accuracy, r_id->mse));
  return WriteJson(c, artifact::kAttack, j);
}

namespace {

// Hash of every hash-carrying artifact present in `dir`.
absl::StatusOr<std::map<std::string, std::string>> ArtifactHashes(
    const std::string& dir) {
  std::map<std::string, std::string> out;
  for (const char* name :
       {artifact::kDataset, artifact::kClient, artifact::kRelease,
        artifact::kPrivacyReport, artifact::kServerEval, artifact::kServerSweep,
        artifact::kAttack, "received.json"}) {
    const std::string path = (fs::path(dir) / name).string();
    if (!fs::exists(path)) continue;
    PL_ASSIGN_OR_RETURN(nlohmann::json j, ParseJsonFile(path));
    out[name] = j.value(kHashColumn, std::string("<none>"));
  }
  for (const char* name : {artifact::kHistory, artifact::kCalibration,
                           artifact::kCalibrationHeldOut}) {
    const std::string path = (fs::path(dir) / name).string();
    if (!fs::exists(path)) continue;
    PL_ASSIGN_OR_RETURN(CsvRows csv, ReadHashedCsv(path, ""));
    absl::StatusOr<std::string> text = ReadText(path);
    // The hash of the first data row stands for the file; ReadHashedCsv
    // strips it, so re-read the raw cell.
    std::string hash = "<none>";
    for (absl::string_view line :
         absl::StrSplit(*text, '\n', absl::SkipEmpty())) {
      if (absl::StartsWith(line, kHashColumn)) continue;
      hash = std::string(line.substr(0, line.find(',')));
      break;
    }
    out[name] = hash;
  }
  return out;
}

std::string CsvNumber(const nlohmann::json& v) {
  return v.is_number() ? FormatDouble(v.get<double>()) : std::string("nan");
}

}  // namespace

absl::Status ReportStage(const std::string& run_dir) {
  PL_ASSIGN_OR_RETURN(auto hashes, ArtifactHashes(run_dir));
  std::set<std::string> distinct;
  for (const auto& [name, h] : hashes) distinct.insert(h);
  if (distinct.size() > 1) {
    std::string detail;
    for (const auto& [name, h] : hashes) absl::StrAppend(&detail, " ", name, "=", h);
    return ConfigError("refusing to report on mixed configuration hashes:" +
                       detail);
  }
  auto path = [&](const char* name) { return (fs::path(run_dir) / name).string(); };
  PL_ASSIGN_OR_RETURN(nlohmann::json privacy, ParseJsonFile(path(artifact::kPrivacyReport)));
  PL_ASSIGN_OR_RETURN(nlohmann::json eval, ParseJsonFile(path(artifact::kServerEval)));
  PL_ASSIGN_OR_RETURN(CsvRows history, ReadHashedCsv(path(artifact::kHistory), ""));
  const std::string hash = *distinct.begin();

  // eps histogram
  std::string hist = absl::StrCat(
      kHashColumn, ",bin_lo,bin_hi,count,released_count,heldout_count\n");
  const std::vector<double> edges = privacy.at("bins").get<std::vector<double>>();
  const auto counts = privacy.at("counts").get<std::vector<size_t>>();
  const auto released = privacy.at("released_counts").get<std::vector<size_t>>();
  const auto held = privacy.value("heldout_counts", std::vector<size_t>(counts.size(), 0));
  if (edges.size() != counts.size() + 1 || released.size() != counts.size() ||
      held.size() != counts.size()) {
    return DataError("privacy_report.json histogram is malformed");
  }
  for (size_t b = 0; b < counts.size(); ++b) {
    absl::StrAppend(&hist, hash, ",", FormatDouble(edges[b]), ",",
                    b + 1 == counts.size() ? std::string("inf")
                                           : FormatDouble(edges[b + 1]),
                    ",", counts[b], ",", released[b], ",", held[b], "\n");
  }

  // loss curve
  std::string loss = absl::StrCat(kHashColumn, ",",
                                  absl::StrJoin(history.header, ","), "\n");
  for (const auto& row : history.rows) {
    absl::StrAppend(&loss, hash, ",", absl::StrJoin(row, ","), "\n");
  }

  // accuracy vs eps
  struct Point {
    double eps;
    size_t released;
    std::string test, validation;
  };
  std::vector<Point> pts;
  auto accuracy = [](const nlohmann::json& rep) {
    return rep.is_object() ? CsvNumber(rep.at("accuracy")) : std::string("nan");
  };
  pts.push_back({eval.at("eps_target").get<double>(),
                 eval.at("bundle_rows").get<size_t>(), accuracy(eval.at("test")),
                 accuracy(eval.at("validation"))});
  const std::string kind = eval.value("kind", std::string());
  if (fs::exists(path(artifact::kServerSweep))) {
    PL_ASSIGN_OR_RETURN(nlohmann::json sweep, ParseJsonFile(path(artifact::kServerSweep)));
    for (const nlohmann::json& p : sweep.at("points")) {
      const double e = p.at("eps_target").get<double>();
      if (e == pts.front().eps) continue;
      pts.push_back({e, p.at("released").get<size_t>(),
                     CsvNumber(p.at("test_accuracy")),
                     CsvNumber(p.at("validation_accuracy"))});
    }
  }
  std::stable_sort(pts.begin(), pts.end(),
                   [](const Point& a, const Point& b) { return a.eps < b.eps; });
  std::string acc = absl::StrCat(
      kHashColumn, ",eps_target,released,server_kind,test_accuracy,"
                   "validation_accuracy\n");
  for (const Point& p : pts) {
    absl::StrAppend(&acc, hash, ",", FormatDouble(p.eps), ",", p.released, ",",
                    kind, ",", p.test, ",", p.validation, "\n");
  }

  for (const auto& [name, text] :
       {std::pair<const char*, std::string*>{artifact::kEpsHistogram, &hist},
        {artifact::kLossCurve, &loss},
        {artifact::kAccuracyVsEps, &acc}}) {
    if (absl::Status s = WriteText(path(name), *text); !s.ok()) return AsData(s);
  }
  Log(LogLevel::kInfo, absl::StrFormat("report: wrote %s, %s and %s in %s",
                                       artifact::kEpsHistogram,
                                       artifact::kLossCurve,
                                       artifact::kAccuracyVsEps, run_dir));
  return absl::OkStatus();
}

absl::Status BenchStage(const RunConfig& c) {
  PL_RETURN_IF_ERROR(EnsureOutDir(c));
  PL_ASSIGN_OR_RETURN(TabularDataset ds, LoadRunData(c));
  PL_ASSIGN_OR_RETURN(DensityModel dm, TrainDensity(c, ds));
  const Matrix xt = SelectRows(ds.x, ds.train);
  const size_t probe = std::min<size_t>(200, xt.rows());
  std::vector<size_t> rows(probe);
  for (size_t i = 0; i < probe; ++i) rows[i] = i;
  const Matrix xp = SelectRows(xt, rows);

  auto t0 = std::chrono::steady_clock::now();
  absl::StatusOr<std::vector<DensityEval>> ev = dm.EvaluateRows(xp);
  if (!ev.ok()) return AsData(ev.status());
  const double kde_s = Seconds(t0);

  ClientModel init = InitClientModel(ds.schema.dim, ds.num_classes(), c.client);
  t0 = std::chrono::steady_clock::now();
  absl::StatusOr<PrivatizedRows> pr = PrivatizeRows(init.privatizer, xp);
  if (!pr.ok()) return AsData(pr.status());
  const double priv_s = Seconds(t0);

  constexpr size_t kClientSteps = 5;
  TrainConfig tc = c.client;
  tc.steps = kClientSteps;
  tc.batch_size = std::min(tc.batch_size, ds.train.size());
  t0 = std::chrono::steady_clock::now();
  absl::StatusOr<ClientModel> cm = TrainClient(ds, tc, &dm);
  if (!cm.ok()) return AsData(cm.status());
  const double client_step_s = Seconds(t0) / kClientSteps;

  constexpr size_t kServerSteps = 50;
  ServerConfig sc = c.server;
  sc.steps = kServerSteps;
  std::vector<int64_t> y;
  for (size_t r : ds.train) y.push_back(ds.y[r]);
  t0 = std::chrono::steady_clock::now();
  absl::StatusOr<ServerModel> sm = FitServerModel(
      xt, y, std::max<size_t>(2, ds.num_classes()), ServerKind::kMlp, sc, c.seed);
  if (!sm.ok()) return AsData(sm.status());
  const double server_step_s = Seconds(t0) / kServerSteps;

  const double client_total = client_step_s * double(c.client.steps);
  const double server_total = server_step_s * double(c.server.steps);
  Json j = Stamp(c);
  j["threads"] = WorkerThreads();
  j["kde_evals_per_second"] = double(probe) / kde_s;
  j["privatize_rows_per_second"] = double(probe) / priv_s;
  j["client_steps_per_second"] = 1.0 / client_step_s;
  j["server_mlp_steps_per_second"] = 1.0 / server_step_s;
  j["projected_client_seconds"] = client_total;
  j["projected_server_mlp_seconds"] = server_total;
  j["client_share"] = client_total / (client_total + server_total);
  Log(LogLevel::kInfo,
      absl::StrFormat("bench: client share of training time %.3f",
                      client_total / (client_total + server_total)));
  return WriteJson(c, artifact::kBench, j);
}

absl::Status RunPipeline(const RunConfig& c, const PipelineOptions& opt) {
  PL_RETURN_IF_ERROR(IngestStage(c));
  PL_RETURN_IF_ERROR(TrainClientStage(c));
  PL_RETURN_IF_ERROR(CalibrateStage(c));
  PL_ASSIGN_OR_RETURN(ReleaseSummary rel, ReleaseStage(c));
  (void)rel;
  std::string bundle_path;
  if (opt.loopback) {
    PL_ASSIGN_OR_RETURN(Bytes bytes, ReadReleasedBytes(c));
    absl::StatusOr<BundleServer> server = BundleServer::Listen("127.0.0.1", 0);
    if (!server.ok()) return Classify(server.status(), ExitClass::kProtocol);
    absl::StatusOr<Received> got = absl::UnknownError("not served");
    std::thread serve([&] { got = server->Accept(); });
    absl::Status sent = SendBytes("127.0.0.1", server->port(), bytes);
    serve.join();
    if (!sent.ok()) return Classify(sent, ExitClass::kProtocol);
    if (!got.ok()) return Classify(got.status(), ExitClass::kProtocol);
    PL_RETURN_IF_ERROR(StoreReceived(c, *got));
    if (got->bytes != bytes) {
      return Classify(absl::DataLossError("loopback bytes differ"),
                      ExitClass::kProtocol);
    }
    bundle_path = c.OutPath(artifact::kReceived);
  } else {
    bundle_path = c.OutPath(artifact::kBundle);
  }
  PL_RETURN_IF_ERROR(TrainServerStage(c, bundle_path));
  if (opt.attack) PL_RETURN_IF_ERROR(AttackStage(c));
  return ReportStage(c.out);
}

}  // namespace powerlearn
