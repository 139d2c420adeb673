#include "gefl/runner.hpp"

#include <algorithm>
#include <boost/math/distributions/students_t.hpp>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>

#include "gefl/checkpoint.hpp"
#include "gefl/errors.hpp"

namespace gefl {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::uint64_t kMndTag = 0x3D;

std::size_t validation_per_class(const ExperimentConfig& cfg) {
  if (!cfg.mnd.enabled) return 1;
  return (cfg.mnd.set_size + cfg.data.classes - 1) / cfg.data.classes;
}

// All client shards stacked in client order.
LabeledDataset union_of_shards(std::span<const ClientState> clients) {
  LabeledDataset out;
  const std::size_t dim = clients.front().shard.feature_dim();
  std::vector<double> data;
  for (const auto& c : clients) {
    data.insert(data.end(), c.shard.inputs.data().begin(), c.shard.inputs.data().end());
    out.labels.insert(out.labels.end(), c.shard.labels.begin(), c.shard.labels.end());
  }
  out.inputs = Tensor::matrix(out.labels.size(), dim, std::move(data));
  out.class_count = clients.front().shard.class_count;
  return out;
}

Tensor first_rows(const Tensor& t, std::size_t n) {
  n = std::min(n, t.rows());
  std::vector<double> data(t.data().begin(), t.data().begin() + static_cast<std::ptrdiff_t>(n * t.cols()));
  return Tensor::matrix(n, t.cols(), std::move(data));
}

std::vector<int> balanced_labels(std::size_t n, std::size_t classes) {
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % classes);
  return labels;
}

GuidanceConfig guidance_for(const GenModelParams& gen, double w) {
  return {family_of(gen) == GenFamily::cddpm ? w : 0.0};
}

std::string write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path.string());
  return path.filename().string();
}

json comm_json(const CommCounts& c) {
  return {{"fe_up", c.fe_up}, {"fe_down", c.fe_down}, {"ka_up", c.ka_up},   {"ka_down", c.ka_down},
          {"tn_up", c.tn_up}, {"tn_down", c.tn_down}, {"up", c.up()},       {"down", c.down()}};
}

json comm_list_json(const std::vector<CommCounts>& per_client) {
  json out = json::array();
  for (const auto& c : per_client) out.push_back(comm_json(c));
  return out;
}

json mnd_json(const MndReport& m) {
  return {{"mean_ratio", m.mean_ratio},
          {"distance", to_string(m.distance)},
          {"probe_size", m.probe_size},
          {"synthetic_size", m.synthetic_size},
          {"validation_size", m.validation_size},
          {"duplicate_hits", m.duplicate_hits},
          {"ratios", m.ratios}};
}

}  // namespace

std::string trace_csv(const std::vector<TraceRow>& rows) {
  std::string out = std::string(kTraceHeader) + "\n";
  for (const auto& r : rows) {
    out += std::to_string(r.round) + "," + r.stage + "," + r.arch + ",";
    if (r.accuracy) out += format_double(*r.accuracy);
    out += "," + format_double(r.loss) + "," + format_double(r.comm_up) + "," + format_double(r.comm_down) + "\n";
  }
  return out;
}

Network probe_embedding(const ExperimentConfig& cfg, std::uint64_t seed) {
  const auto fed = cfg.federation_for(seed);
  const auto pool = build_datasets(cfg.data, seed, 1).pool;
  const std::vector<std::size_t> hidden = {64, 32};
  Network net = build_classifier({hidden, Activation::relu}, pool.feature_dim(), pool.class_count);
  Rng init(derive_seed(seed, {kMndTag, 0}));
  net.init_glorot(init);
  FederationConfig train = fed;
  train.t_s = 0;
  train.t_r = 20;
  net = local_classifier_round(net, pool, nullptr, train, derive_seed(seed, {kMndTag, 3}), nullptr);
  return net.slice(0, net.layers().size() - 1);
}

MndSets mnd_sets(const ExperimentConfig& cfg, std::uint64_t seed, const GenModelParams& gen, const Network* fe) {
  const auto fed = cfg.federation_for(seed);
  const auto bundle = build_datasets(cfg.data, seed, validation_per_class(cfg));
  const auto clients = make_clients(bundle.pool, fed, cfg.fraction);
  const auto pool = union_of_shards(clients);

  std::vector<std::size_t> order(pool.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng shuffle(derive_seed(seed, {kMndTag, 1}));
  shuffle.shuffle(std::span<std::size_t>(order));
  order.resize(std::min(order.size(), cfg.mnd.probe_size));

  MndSets sets;
  sets.probes = pool.subset(order).inputs;
  sets.validation = first_rows(bundle.validation.inputs, cfg.mnd.set_size);
  if (fe && !fe->empty()) {
    sets.probes = fe->forward(sets.probes);
    sets.validation = fe->forward(sets.validation);
  }
  const auto labels = balanced_labels(sets.validation.rows(), cfg.data.classes);
  Rng rng(derive_seed(seed, {kMndTag, 2}));
  sets.synthetic = gen_sample(gen, labels, guidance_for(gen, fed.guidance_w), rng);
  return sets;
}

RunReport run_seed(const ExperimentConfig& cfg, std::uint64_t seed) {
  const auto start = std::chrono::steady_clock::now();
  const auto fed = cfg.federation_for(seed);
  fed.validate();
  const auto bundle = build_datasets(cfg.data, seed, validation_per_class(cfg));
  const auto clients = make_clients(bundle.pool, fed, cfg.fraction);

  RunReport report;
  report.seed = seed;
  report.config_text = emit_config(cfg);
  report.result = run_method(cfg.method, clients, fed, &bundle.test);

  std::vector<std::size_t> client_arch;
  for (const auto& c : clients) client_arch.push_back(c.arch_index);
  const auto sizes = ledger_sizes(cfg.method, fed, client_arch, bundle.pool.feature_dim(), cfg.data.classes);
  report.ledger = comm_ledger(cfg.method, fed, client_arch, sizes);

  if (cfg.mnd.enabled && report.result.server.gen) {
    const bool features = cfg.method == Method::geflf && !report.result.server.fe.empty();
    const auto sets = mnd_sets(cfg, seed, *report.result.server.gen, features ? &report.result.server.fe : nullptr);
    if (cfg.mnd.distance == DistanceKind::probe_feature && !features) {
      const auto embedding = probe_embedding(cfg, seed);
      report.mnd = mnd_ratio(sets.probes, sets.synthetic, sets.validation, &embedding);
    } else {
      report.mnd = mnd_ratio(sets.probes, sets.synthetic, sets.validation);
    }
  }
  report.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

json report_json(const ExperimentConfig& cfg, const RunReport& report) {
  const auto& r = report.result;
  json per_arch = json::object();
  for (const auto& [m, acc] : r.arch_accuracy) per_arch[std::to_string(m)] = acc;
  json trace = json::array();
  for (const auto& row : r.trace) {
    trace.push_back({{"round", row.round},
                     {"stage", row.stage},
                     {"arch", row.arch},
                     {"accuracy", row.accuracy ? json(*row.accuracy) : json(nullptr)},
                     {"loss", row.loss},
                     {"comm_up_floats", row.comm_up},
                     {"comm_down_floats", row.comm_down}});
  }
  CommCounts simulated;
  for (const auto& c : r.comm) simulated += c;
  return {{"schema_version", kReportSchemaVersion},
          {"seed", report.seed},
          {"method", to_string(cfg.method)},
          {"config", report.config_text},
          {"final", {{"per_arch", per_arch}, {"mean_accuracy", r.mean_accuracy}}},
          {"ka_rounds", r.ka_rounds},
          {"trace", trace},
          {"comm",
           {{"ledger", {{"per_client", comm_list_json(report.ledger.per_client)}, {"total", comm_json(report.ledger.total)}}},
            {"simulated", {{"per_client", comm_list_json(r.comm)}, {"total", comm_json(simulated)}}}}},
          {"mnd", report.mnd ? mnd_json(*report.mnd) : json(nullptr)},
          {"wall_time_s", report.wall_time_s},
          {"artifacts", report.artifacts}};
}

RunReport run_and_write(const ExperimentConfig& cfg, std::uint64_t seed) {
  RunReport report = run_seed(cfg, seed);
  const fs::path dir(cfg.out_dir);
  fs::create_directories(dir);
  const std::string tag = "_seed" + std::to_string(seed);
  const auto& server = report.result.server;

  report.artifacts["trace"] = write_text(dir / ("trace" + tag + ".csv"), trace_csv(report.result.trace));
  if (server.gen) {
    std::ostringstream ckpt;
    save_gen(ckpt, *server.gen);
    report.artifacts["gen_checkpoint"] = write_text(dir / ("gen" + tag + ".ckpt"), ckpt.str());
  }
  if (cfg.method == Method::geflf) {
    std::ostringstream ckpt;
    save_network(ckpt, server.fe);
    report.artifacts["fe_checkpoint"] = write_text(dir / ("fe" + tag + ".ckpt"), ckpt.str());
    if (server.gen) {
      LabeledDataset syn;
      syn.class_count = cfg.data.classes;
      syn.labels = balanced_labels(cfg.mnd.set_size, cfg.data.classes);
      Rng rng(derive_seed(seed, {kMndTag, 4}));
      syn.inputs = gen_sample(*server.gen, syn.labels, guidance_for(*server.gen, cfg.fed.guidance_w), rng);
      std::ostringstream csv;
      write_csv(csv, syn);
      report.artifacts["synthetic_features"] = write_text(dir / ("synthetic_features" + tag + ".csv"), csv.str());
    }
  }
  report.artifacts["report"] = "report" + tag + ".json";
  write_text(dir / report.artifacts["report"], report_json(cfg, report).dump(2) + "\n");
  return report;
}

std::vector<RunReport> run_experiment(const ExperimentConfig& cfg) {
  std::vector<RunReport> out;
  for (auto seed : cfg.seeds) out.push_back(run_and_write(cfg, seed));
  return out;
}

SummaryStat summarize(const std::vector<double>& values) {
  SummaryStat s;
  s.n = values.size();
  if (values.empty()) return s;
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(s.n);
  const bool identical = std::all_of(values.begin(), values.end(), [&](double v) { return v == values.front(); });
  if (s.n < 2 || identical) {
    if (identical) s.mean = values.front();
    return s;
  }
  double ss = 0.0;
  for (double v : values) ss += (v - s.mean) * (v - s.mean);
  const double sd = std::sqrt(ss / static_cast<double>(s.n - 1));
  const boost::math::students_t dist(static_cast<double>(s.n - 1));
  const double q = boost::math::quantile(boost::math::complement(dist, 0.025));
  s.half_width = q * sd / std::sqrt(static_cast<double>(s.n));
  return s;
}

namespace {

json stat_json(const std::vector<double>& values) {
  const auto s = summarize(values);
  return {{"mean", s.mean}, {"ci95", s.half_width}, {"n", s.n}, {"values", values}};
}

}  // namespace

json report_directory(const std::string& dir) {
  const std::regex name_re(R"(report_seed(\d+)\.json)");
  std::vector<std::pair<std::uint64_t, fs::path>> files;
  if (!fs::is_directory(dir)) throw ConfigError("not a directory: " + dir);
  for (const auto& entry : fs::directory_iterator(dir)) {
    std::smatch m;
    const std::string name = entry.path().filename().string();
    if (std::regex_match(name, m, name_re)) files.emplace_back(std::stoull(m[1].str()), entry.path());
  }
  if (files.empty()) throw ConfigError("no report_seed*.json files in " + dir);
  std::sort(files.begin(), files.end());

  std::string method;
  std::vector<std::uint64_t> seeds;
  std::vector<double> mean_acc, mnd;
  std::map<std::string, std::vector<double>> per_arch;
  json finals = json::array();
  for (const auto& [seed, path] : files) {
    std::ifstream in(path);
    json r;
    try {
      r = json::parse(in);
    } catch (const json::exception& e) {
      throw ConfigError(path.string() + ": " + e.what());
    }
    if (r.value("schema_version", -1) != kReportSchemaVersion)
      throw ConfigError(path.string() + ": unsupported schema_version");
    const std::string m = r.at("method").get<std::string>();
    if (method.empty()) method = m;
    if (m != method) throw ConfigError("reports in " + dir + " mix methods " + method + " and " + m);
    seeds.push_back(seed);
    const double acc = r.at("final").at("mean_accuracy").get<double>();
    mean_acc.push_back(acc);
    for (const auto& [arch, v] : r.at("final").at("per_arch").items()) per_arch[arch].push_back(v.get<double>());
    if (!r.at("mnd").is_null()) mnd.push_back(r.at("mnd").at("mean_ratio").get<double>());
    finals.push_back({{"seed", seed}, {"mean_accuracy", acc}});
  }

  json summary = {{"schema_version", kReportSchemaVersion},
                  {"method", method},
                  {"seeds", seeds},
                  {"mean_accuracy", stat_json(mean_acc)},
                  {"final_rows", finals}};
  json arch_json = json::object();
  for (const auto& [arch, values] : per_arch) arch_json[arch] = stat_json(values);
  summary["per_arch"] = arch_json;
  summary["mnd_mean_ratio"] = mnd.empty() ? json(nullptr) : stat_json(mnd);

  std::string csv = "metric,mean,ci95,n\n";
  auto add = [&](const std::string& name, const std::vector<double>& values) {
    const auto s = summarize(values);
    csv += name + "," + format_double(s.mean) + "," + format_double(s.half_width) + "," + std::to_string(s.n) + "\n";
  };
  add("mean_accuracy", mean_acc);
  for (const auto& [arch, values] : per_arch) add("accuracy_arch" + arch, values);
  if (!mnd.empty()) add("mnd_mean_ratio", mnd);

  write_text(fs::path(dir) / "summary.json", summary.dump(2) + "\n");
  write_text(fs::path(dir) / "summary.csv", csv);
  return summary;
}

}  // namespace gefl
