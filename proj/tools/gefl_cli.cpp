#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "gefl/checkpoint.hpp"
#include "gefl/config.hpp"
#include "gefl/errors.hpp"
#include "gefl/metrics.hpp"
#include "gefl/runner.hpp"

namespace {

using namespace gefl;
using nlohmann::json;

constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

LabeledDataset load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read " + path);
  try {
    return read_csv(in);
  } catch (const DomainError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

void write_file(const std::string& path, const std::string& text) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
}

struct RunArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::size_t> threads;
};

void cmd_run(const RunArgs& a) {
  ExperimentConfig cfg = load_config_file(a.config);
  if (a.seed) cfg.seeds = {*a.seed};
  if (a.out) cfg.out_dir = *a.out;
  if (a.threads) cfg.fed.threads = *a.threads;
  for (auto seed : cfg.seeds) {
    const auto report = run_and_write(cfg, seed);
    std::cerr << "seed " << seed << ": mean accuracy " << report.result.mean_accuracy << ", report "
              << (std::filesystem::path(cfg.out_dir) / report.artifacts.at("report")).string() << "\n";
  }
}

struct MndArgs {
  std::string checkpoint, data_spec, fe_checkpoint;
  std::string probes, synthetic, validation;
  std::optional<std::uint64_t> seed;
  std::string out = "mnd.json";
};

void cmd_mnd(const MndArgs& a) {
  MndReport report;
  if (!a.checkpoint.empty()) {
    if (a.data_spec.empty()) throw ConfigError("--checkpoint needs --data-spec");
    const ExperimentConfig cfg = load_config_file(a.data_spec);
    const std::uint64_t seed = a.seed.value_or(cfg.seeds.front());
    const GenModelParams gen = load_gen_file(a.checkpoint);
    std::optional<Network> fe;
    if (!a.fe_checkpoint.empty()) fe = load_network_file(a.fe_checkpoint);
    const auto sets = mnd_sets(cfg, seed, gen, fe ? &*fe : nullptr);
    if (cfg.mnd.distance == DistanceKind::probe_feature && !fe) {
      const auto embedding = probe_embedding(cfg, seed);
      report = mnd_ratio(sets.probes, sets.synthetic, sets.validation, &embedding);
    } else {
      report = mnd_ratio(sets.probes, sets.synthetic, sets.validation);
    }
  } else {
    if (a.probes.empty() || a.synthetic.empty() || a.validation.empty())
      throw ConfigError("mnd needs --checkpoint with --data-spec, or --probes, --synthetic and --validation");
    Tensor probes = load_dataset(a.probes).inputs;
    Tensor validation = load_dataset(a.validation).inputs;
    const Tensor synthetic = load_dataset(a.synthetic).inputs;
    if (!a.fe_checkpoint.empty()) {
      const Network fe = load_network_file(a.fe_checkpoint);
      probes = fe.forward(probes);
      validation = fe.forward(validation);
    }
    report = mnd_ratio(probes, synthetic, validation);
  }
  const json out = {{"schema_version", kReportSchemaVersion},
                    {"mean_ratio", report.mean_ratio},
                    {"distance", to_string(report.distance)},
                    {"probe_size", report.probe_size},
                    {"synthetic_size", report.synthetic_size},
                    {"validation_size", report.validation_size},
                    {"duplicate_hits", report.duplicate_hits},
                    {"ratios", report.ratios}};
  write_file(a.out, out.dump(2) + "\n");
  std::cerr << "mean MND " << report.mean_ratio << " -> " << a.out << "\n";
}

struct InvertArgs {
  std::string fe_checkpoint, feature_file;
  std::string out = "inverted.csv";
  InversionConfig inv;
};

void cmd_invert(const InvertArgs& a) {
  const Network fe = load_network_file(a.fe_checkpoint);
  const LabeledDataset features = load_dataset(a.feature_file);
  if (features.feature_dim() != fe.output_dim())
    throw ConfigError("feature file has " + std::to_string(features.feature_dim()) + " columns, extractor outputs " +
                      std::to_string(fe.output_dim()));
  LabeledDataset images;
  images.labels = features.labels;
  images.class_count = features.class_count;
  std::vector<double> pixels;
  json residuals = json::array();
  for (std::size_t i = 0; i < features.size(); ++i) {
    const auto result = invert_feature(fe, features.inputs.row(i), a.inv);
    pixels.insert(pixels.end(), result.x.data().begin(), result.x.data().end());
    residuals.push_back(result.residual);
  }
  images.inputs = Tensor::matrix(features.size(), fe.input_dim(), std::move(pixels));
  std::ostringstream csv;
  write_csv(csv, images);
  write_file(a.out, csv.str());
  const json meta = {{"schema_version", kReportSchemaVersion},
                     {"steps", a.inv.steps},
                     {"lr", a.inv.lr},
                     {"tv_weight", a.inv.tv_weight},
                     {"residuals", residuals}};
  write_file(a.out + ".json", meta.dump(2) + "\n");
  std::cerr << "inverted " << features.size() << " features -> " << a.out << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"GeFL federated learning simulator"};
  app.require_subcommand(1);

  RunArgs run_args;
  auto* run = app.add_subcommand("run", "Run an experiment from a config file");
  run->add_option("--config", run_args.config, "Config file (key = value lines)")->required();
  run->add_option("--seed", run_args.seed, "Run only this seed");
  run->add_option("--out", run_args.out, "Output directory");
  run->add_option("--threads", run_args.threads, "Client threads")->check(CLI::PositiveNumber);

  MndArgs mnd_args;
  auto* mnd = app.add_subcommand("mnd", "Mean nearest-distance ratio of generated samples");
  mnd->add_option("--checkpoint", mnd_args.checkpoint, "Generator checkpoint");
  mnd->add_option("--data-spec", mnd_args.data_spec, "Config file describing the data and clients");
  mnd->add_option("--seed", mnd_args.seed, "Data seed (default: first seed of the data spec)");
  mnd->add_option("--fe-checkpoint", mnd_args.fe_checkpoint, "Feature extractor for feature-space generators");
  mnd->add_option("--probes", mnd_args.probes, "Probe CSV");
  mnd->add_option("--synthetic", mnd_args.synthetic, "Synthetic CSV");
  mnd->add_option("--validation", mnd_args.validation, "Validation CSV");
  mnd->add_option("--out", mnd_args.out, "Output JSON");

  InvertArgs inv_args;
  auto* invert = app.add_subcommand("invert", "Reconstruct inputs from features");
  invert->add_option("--fe-checkpoint", inv_args.fe_checkpoint, "Feature extractor checkpoint")->required();
  invert->add_option("--feature-file", inv_args.feature_file, "Feature CSV (label,x0,...)")->required();
  invert->add_option("--out", inv_args.out, "Output CSV; residuals go to <out>.json");
  invert->add_option("--steps", inv_args.inv.steps, "Gradient steps");
  invert->add_option("--lr", inv_args.inv.lr, "Step size")->check(CLI::PositiveNumber);
  invert->add_option("--tv", inv_args.inv.tv_weight, "Total-variation weight")->check(CLI::NonNegativeNumber);

  std::string report_dir;
  auto* report = app.add_subcommand("report", "Aggregate per-seed reports into a summary");
  report->add_option("--dir", report_dir, "Directory holding report_seed*.json")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e, std::cerr, std::cerr);
    return kExitConfig;
  }

  try {
    if (*run) cmd_run(run_args);
    if (*mnd) cmd_mnd(mnd_args);
    if (*invert) cmd_invert(inv_args);
    if (*report) {
      const auto summary = gefl::report_directory(report_dir);
      const auto& acc = summary.at("mean_accuracy");
      std::cerr << "mean accuracy " << acc.at("mean").get<double>() << " +- " << acc.at("ci95").get<double>()
                << " over " << acc.at("n").get<std::size_t>() << " seeds -> " << report_dir << "/summary.json\n";
    }
  } catch (const gefl::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return 0;
}
