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

#include "powerlearn/cli.h"

#include <cstdlib>
#include <optional>
#include <string>
#include <utility>

#include "CLI11.hpp"
#include "absl/strings/str_cat.h"
#include "absl/strings/str_format.h"
#include "powerlearn/numkit.h"
#include "powerlearn/pipeline.h"

namespace powerlearn {
namespace {

struct Flags {
  std::string config;
  std::optional<uint64_t> seed;
  std::string out;
  int threads = 0;
  std::optional<double> eps_target;
  std::optional<double> alpha;
  std::string listen;
  std::string connect;
  std::string bundle;
  double timeout_s = 30.0;
  bool skip_attack = false;
};

absl::Status ConfigError(const std::string& msg) {
  return Classify(absl::InvalidArgumentError(msg), ExitClass::kConfig);
}

absl::StatusOr<RunConfig> LoadConfig(const Flags& f) {
  if (f.config.empty()) return ConfigError("--config is required");
  absl::StatusOr<RunConfig> c = RunConfig::Load(f.config);
  if (!c.ok()) return Classify(c.status(), ExitClass::kConfig);
  if (f.seed.has_value()) {
    c->seed = *f.seed;
    c->client.seed = *f.seed;
  }
  if (!f.out.empty()) c->out = f.out;
  if (f.eps_target.has_value()) c->eps_target = *f.eps_target;
  if (f.alpha.has_value()) c->client.alpha = *f.alpha;
  if (absl::Status s = c->Validate(); !s.ok()) {
    return Classify(s, ExitClass::kConfig);
  }
  return c;
}

absl::StatusOr<std::pair<std::string, int>> Endpoint(const std::string& text,
                                                     const char* flag) {
  if (text.empty()) return ConfigError(absl::StrCat(flag, " host:port is required"));
  absl::StatusOr<std::pair<std::string, int>> ep = ParseEndpoint(text);
  if (!ep.ok()) return Classify(ep.status(), ExitClass::kConfig);
  return ep;
}

absl::Status Dispatch(const std::string& cmd, const Flags& f) {
  if (cmd == "report" && f.config.empty()) {
    if (f.out.empty()) return ConfigError("report needs --out or --config");
    return ReportStage(f.out);
  }
  absl::StatusOr<RunConfig> c = LoadConfig(f);
  if (!c.ok()) return c.status();
  const absl::Duration timeout = absl::Seconds(f.timeout_s);
  if (cmd == "ingest") return IngestStage(*c);
  if (cmd == "train-client") return TrainClientStage(*c);
  if (cmd == "calibrate") return CalibrateStage(*c);
  if (cmd == "release") return ReleaseStage(*c).status();
  if (cmd == "send") {
    absl::StatusOr<std::pair<std::string, int>> ep = Endpoint(f.connect, "--connect");
    if (!ep.ok()) return ep.status();
    return SendStage(*c, ep->first, ep->second, timeout);
  }
  if (cmd == "serve") {
    absl::StatusOr<std::pair<std::string, int>> ep = Endpoint(f.listen, "--listen");
    if (!ep.ok()) return ep.status();
    return ServeStage(*c, ep->first, ep->second, timeout);
  }
  if (cmd == "train-server") return TrainServerStage(*c, f.bundle);
  if (cmd == "attack") return AttackStage(*c);
  if (cmd == "report") return ReportStage(c->out);
  if (cmd == "bench") return BenchStage(*c);
  if (cmd == "pipeline") {
    PipelineOptions opt;
    opt.attack = !f.skip_attack;
    return RunPipeline(*c, opt);
  }
  return ConfigError("unknown subcommand " + cmd);
}

}  // namespace

int RunCli(int argc, char** argv) {
  if (const char* env = std::getenv("POWERMECH_LOG"); env != nullptr) {
    absl::StatusOr<LogLevel> level = ParseLogLevel(env);
    if (!level.ok()) {
      Log(LogLevel::kError, std::string(level.status().message()));
      return ExitCode(Classify(level.status(), ExitClass::kConfig));
    }
    SetLogLevel(*level);
  }

  CLI::App app{"Power-mechanism private representation learning"};
  app.require_subcommand(1, 1);
  Flags f;
  const std::pair<const char*, const char*> commands[] = {
      {"ingest", "encode and split the CSV"},
      {"train-client", "train the privatizer and utility network"},
      {"calibrate", "per-sample epsilon calibration"},
      {"release", "filter by eps target and write the bundle"},
      {"send", "send the bundle to a listening server"},
      {"serve", "receive one bundle"},
      {"train-server", "fit the server model on a bundle"},
      {"attack", "reconstruction attack and bound"},
      {"report", "write CSVs for plotting"},
      {"bench", "time KDE, privatization and training"},
      {"pipeline", "run every stage end to end"},
  };
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", f.config, "run configuration JSON");
    sub->add_option("--seed", f.seed, "override the seed");
    sub->add_option("--out", f.out, "run directory");
    sub->add_option("--threads", f.threads, "worker thread cap")
        ->check(CLI::NonNegativeNumber);
    sub->add_option("--eps-target", f.eps_target, "override the eps target");
    sub->add_option("--alpha", f.alpha, "override the CI failure probability");
    sub->add_option("--listen", f.listen, "host:port to serve on");
    sub->add_option("--connect", f.connect, "host:port to send to");
    sub->add_option("--bundle", f.bundle, "bundle for train-server");
    sub->add_option("--timeout", f.timeout_s, "socket timeout in seconds")
        ->check(CLI::PositiveNumber);
    sub->add_flag("--skip-attack", f.skip_attack, "pipeline without attack");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(ExitClass::kConfig);
  }
  if (f.threads > 0) SetWorkerThreads(f.threads);

  const std::string cmd = app.get_subcommands().front()->get_name();
  const absl::Status s = Dispatch(cmd, f);
  if (!s.ok()) {
    Log(LogLevel::kError, absl::StrCat(cmd, ": ", s.message()));
  }
  return ExitCode(s);
}

}  // namespace powerlearn
