#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "evad/eval.hpp"
#include "evad/ingest.hpp"
#include "evad/schema.hpp"
#include "evad/stream.hpp"
#include "evad/train.hpp"

namespace evad {

struct PathConfig {
  std::string auth_log;
  std::string proc_log;
  std::string redteam;
  std::string events = "events.tsv";
  std::string model_dir = "model";
  std::string replay_dir = "replay";
  std::string report = "report.txt";
  std::string state_dir = "triage-state";
};

struct EventTypeDef {
  std::string name;
  std::vector<std::string> signature;
};

struct SchemaConfig {
  std::vector<std::string> entity_types{"user", "auth_type", "computer", "process"};
  std::vector<EventTypeDef> event_types{{"local_auth", {"user", "auth_type", "computer"}},
                                        {"remote_auth", {"user", "auth_type", "computer", "computer"}},
                                        {"proc_start", {"computer", "user", "process"}}};
  Schema build() const;
};

struct ServeConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::size_t default_limit = 100;
};

/// Everything a command needs. Loaded from a JSON file whose keys mirror
/// these fields; unknown keys are rejected.
struct RunConfig {
  std::uint64_t seed = 0;
  Execution execution = Execution::Parallel;
  PathConfig paths;
  SchemaConfig schema;
  TrainConfig train;
  RetrainConfig retrain;
  IngestOptions ingest;
  SynthConfig synthetic;
  EvalOptions eval{0.01, {1000, 5000, 10000, 20000}, {}, {"local_auth", "remote_auth"}, 86400, true};
  IntervalMethod interval = IntervalMethod::Normal;
  ServeConfig serve;

  /// Pushes seed and execution into the sub-configs and validates them.
  void finalize();
  void validate() const;
};

RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::string& path);
/// Effective configuration as pretty-printed JSON (round-trips through
/// parse_run_config).
std::string dump_run_config(const RunConfig& config);

}  // namespace evad
