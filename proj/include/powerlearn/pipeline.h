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


// End-to-end run driver behind the command line: a validated run
// configuration plus one function per pipeline stage. Stages communicate
// only through artifact files in the run directory, and every artifact
// carries the configuration hash.

#ifndef POWERLEARN_PIPELINE_H_
#define POWERLEARN_PIPELINE_H_

#include <cstdint>
#include <string>
#include <vector>

#include "absl/status/status.h"
#include "absl/status/statusor.h"
#include "absl/time/time.h"
#include "powerlearn/attack.h"
#include "powerlearn/serverside.h"
#include "powerlearn/trainer.h"

namespace powerlearn {

// Process exit codes per error class.
enum class ExitClass {
  kOk = 0,
  kOther = 1,
  kConfig = 2,
  kData = 3,
  kDivergence = 4,
  kProtocol = 5,
};

// Tags `s` with an exit class unless it already carries one.
absl::Status Classify(absl::Status s, ExitClass c);
// The tag, or a class derived from the status code when untagged.
ExitClass ExitClassOf(const absl::Status& s);
int ExitCode(const absl::Status& s);

enum class LogLevel { kError = 0, kInfo = 1, kDebug = 2 };
absl::StatusOr<LogLevel> ParseLogLevel(const std::string& name);
void SetLogLevel(LogLevel level);
void Log(LogLevel level, const std::string& message);

struct RunConfig {
  uint64_t seed = 7;
  // Paths as written; relative ones are resolved against base_dir.
  std::string csv;
  std::string schema;
  std::string out = "run";
  std::string base_dir;
  TrainConfig client;
  double eps_target = 1.0;
  double lambda_adj = 1.0;
  std::vector<double> eps_grid;  // extra targets for the accuracy sweep
  ServerKind server_kind = ServerKind::kMlp;
  ServerConfig server;
  AttackConfig attack;
  size_t attack_fisher_rows = 2000;

  // Unknown keys and out-of-range values are errors.
  static absl::StatusOr<RunConfig> FromJson(const std::string& text,
                                            const std::string& base_dir = "");
  static absl::StatusOr<RunConfig> Load(const std::string& path);

  absl::Status Validate() const;
  // Canonical form with defaults filled in.
  std::string ToJson() const;
  // FNV-1a 64 of ToJson() without the output directory, as 16 hex digits.
  std::string Hash() const;

  std::string CsvPath() const;
  std::string SchemaPath() const;
  std::string OutPath(const std::string& name) const;
};

// Artifact file names inside the run directory.
namespace artifact {
inline constexpr char kDataset[] = "dataset.json";
inline constexpr char kPrivatizer[] = "privatizer.bin";
inline constexpr char kClient[] = "client.json";
inline constexpr char kHistory[] = "train_history.csv";
inline constexpr char kCalibration[] = "calibration.csv";
inline constexpr char kCalibrationHeldOut[] = "calibration_heldout.csv";
inline constexpr char kBundle[] = "release.plb";
inline constexpr char kRelease[] = "release.json";
inline constexpr char kPrivacyReport[] = "privacy_report.json";
inline constexpr char kReceived[] = "received.plb";
inline constexpr char kServerModel[] = "server_model.plsrv";
inline constexpr char kServerEval[] = "server_eval.json";
inline constexpr char kServerSweep[] = "server_sweep.json";
inline constexpr char kAttack[] = "attack.json";
inline constexpr char kEpsHistogram[] = "eps_histogram.csv";
inline constexpr char kLossCurve[] = "loss_curve.csv";
inline constexpr char kAccuracyVsEps[] = "accuracy_vs_eps.csv";
inline constexpr char kBench[] = "bench.json";
}  // namespace artifact

absl::Status IngestStage(const RunConfig& c);
absl::Status TrainClientStage(const RunConfig& c);
absl::Status CalibrateStage(const RunConfig& c);

struct ReleaseSummary {
  size_t released = 0;
  size_t total = 0;
  double dataset_eps = 0.0;
};
// An empty release still writes a (zero-row) bundle and logs a warning.
absl::StatusOr<ReleaseSummary> ReleaseStage(const RunConfig& c);

absl::Status SendStage(const RunConfig& c, const std::string& host, int port,
                       absl::Duration timeout = absl::Seconds(30));
// Accepts one bundle and stores it as received.plb.
absl::Status ServeStage(const RunConfig& c, const std::string& host, int port,
                        absl::Duration timeout = absl::Seconds(30));

// Trains on `bundle_path` (empty: received.plb if present, else
// release.plb). When the client artifacts are present the model is also
// scored on the privatized validation split, and eps_grid is swept.
absl::Status TrainServerStage(const RunConfig& c,
                              const std::string& bundle_path = "");

absl::Status AttackStage(const RunConfig& c);

// Reads one run directory and writes the three report CSVs into it. All
// inputs must carry the same configuration hash.
absl::Status ReportStage(const std::string& run_dir);

absl::Status BenchStage(const RunConfig& c);

struct PipelineOptions {
  bool loopback = true;  // ship the bundle over a local socket
  bool attack = true;
};
absl::Status RunPipeline(const RunConfig& c, const PipelineOptions& opt = {});

// host:port
absl::StatusOr<std::pair<std::string, int>> ParseEndpoint(
    const std::string& text);

}  // namespace powerlearn

#endif  // POWERLEARN_PIPELINE_H_
