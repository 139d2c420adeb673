#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "gefl/config.hpp"
#include "gefl/federation.hpp"
#include "gefl/metrics.hpp"

namespace gefl {

inline constexpr int kReportSchemaVersion = 1;
inline constexpr const char* kTraceHeader = "round,stage,arch,accuracy,loss,comm_up_floats,comm_down_floats";

struct RunReport {
  std::uint64_t seed = 0;
  std::string config_text;  // emit_config of the experiment config
  RunResult result;
  CommLedger ledger;
  std::optional<MndReport> mnd;
  double wall_time_s = 0.0;
  std::map<std::string, std::string> artifacts;  // name -> file name in the output directory
};

// CSV trace with kTraceHeader; empty accuracy cells on generative rows.
std::string trace_csv(const std::vector<TraceRow>& rows);

nlohmann::json report_json(const ExperimentConfig& cfg, const RunReport& report);

// Runs one seed without touching the file system.
RunReport run_seed(const ExperimentConfig& cfg, std::uint64_t seed);

// Runs one seed and writes report_seed<N>.json, trace_seed<N>.csv and the
// model artifacts into cfg.out_dir (created if missing).
RunReport run_and_write(const ExperimentConfig& cfg, std::uint64_t seed);

// Every seed of the config, in order.
std::vector<RunReport> run_experiment(const ExperimentConfig& cfg);

// Synthetic, validation and probe sets for MND. Probes are drawn from the
// clients' training data; the validation set is held out. For GeFL-F all
// three live in feature space.
struct MndSets {
  Tensor probes;
  Tensor synthetic;
  Tensor validation;
};
MndSets mnd_sets(const ExperimentConfig& cfg, std::uint64_t seed, const GenModelParams& gen, const Network* fe);

// Penultimate layer of a classifier trained on the full training pool; used as
// the probe_feature embedding.
Network probe_embedding(const ExperimentConfig& cfg, std::uint64_t seed);

struct SummaryStat {
  double mean = 0.0;
  double half_width = 0.0;  // 95% Student-t interval; 0 for n = 1 or identical values
  std::size_t n = 0;
};

SummaryStat summarize(const std::vector<double>& values);

// Reads every report_seed*.json in dir, writes summary.json and summary.csv,
// and returns the summary document.
nlohmann::json report_directory(const std::string& dir);

}  // namespace gefl
