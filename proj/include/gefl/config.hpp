#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "gefl/datasets.hpp"
#include "gefl/federation.hpp"
#include "gefl/metrics.hpp"

namespace gefl {

enum class DatasetKind { blobs, glyphs };

std::string to_string(DatasetKind k);

struct DatasetSpec {
  DatasetKind kind = DatasetKind::blobs;
  std::size_t classes = 4;
  std::size_t dim = 8;    // blobs
  std::size_t side = 8;   // glyphs
  std::size_t n_per_class = 1000;
  std::size_t test_per_class = 250;
  double spread = 1.5;    // blobs
  double noise = 0.1;     // glyphs
  int shift_max = 1;      // glyphs
  bool operator==(const DatasetSpec&) const = default;
};

// Training pool, test set and an MND validation set, each from its own stream.
struct DatasetBundle {
  LabeledDataset pool;
  LabeledDataset test;
  LabeledDataset validation;
};

DatasetBundle build_datasets(const DatasetSpec& spec, std::uint64_t seed, std::size_t validation_per_class);

struct MndSpec {
  bool enabled = false;
  std::size_t probe_size = 256;
  std::size_t set_size = 256;  // |S| == |V|
  DistanceKind distance = DistanceKind::l2;
  bool operator==(const MndSpec&) const = default;
};

struct ExperimentConfig {
  FederationConfig fed;
  DatasetSpec data;
  double fraction = 0.1;
  std::vector<std::uint64_t> seeds = {0};
  Method method = Method::gefl;
  EvalMode eval = EvalMode::real_plus_syn;
  std::string out_dir = "out";
  MndSpec mnd;

  // Federation config for one seed with data-derived fields filled in.
  FederationConfig federation_for(std::uint64_t seed) const;
  bool operator==(const ExperimentConfig&) const = default;
};

// `key = value` lines; `#` starts a comment. Unknown keys, malformed values
// and constraint violations throw ConfigError naming the line.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config_file(const std::string& path);

// Every key with its current value; parse_config(emit_config(c)) == c.
std::string emit_config(const ExperimentConfig& cfg);

}  // namespace gefl
