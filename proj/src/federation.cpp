#include "gefl/federation.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <functional>
#include <set>
#include <thread>

#include "gefl/errors.hpp"
#include "gefl/metrics.hpp"

namespace gefl {

namespace {

// Runs fn(0..n-1) on up to `threads` workers. Each index writes only its own
// output slot, so results do not depend on scheduling.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  const std::size_t workers = std::min(threads, n);
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += workers) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

double total_up(const std::vector<CommCounts>& comm) {
  double s = 0.0;
  for (const auto& c : comm) s += c.up();
  return s;
}

double total_down(const std::vector<CommCounts>& comm) {
  double s = 0.0;
  for (const auto& c : comm) s += c.down();
  return s;
}

std::string arch_label(std::size_t m) { return std::to_string(m); }

double mean_of(std::span<const double> xs) {
  if (xs.empty()) return 0.0;
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

// Per-arch rows followed by a "mean" row for one evaluated round.
void push_accuracy_rows(std::vector<TraceRow>& trace, std::size_t round, const std::string& stage,
                        const std::map<std::size_t, double>& per_arch, double loss,
                        const std::vector<CommCounts>& comm) {
  std::vector<double> values;
  for (const auto& [m, acc] : per_arch) {
    trace.push_back({round, stage, arch_label(m), acc, loss, total_up(comm), total_down(comm)});
    values.push_back(acc);
  }
  trace.push_back({round, stage, "mean", mean_of(values), loss, total_up(comm), total_down(comm)});
}

std::map<std::size_t, std::size_t> group_sizes(std::span<const ClientState> clients) {
  std::map<std::size_t, std::size_t> sizes;
  for (const auto& c : clients) ++sizes[c.arch_index];
  return sizes;
}

void check_clients(std::span<const ClientState> clients, const FederationConfig& cfg) {
  if (clients.empty()) throw ConfigError("no clients");
  if (clients.size() != cfg.client_count)
    throw ConfigError("client list has " + std::to_string(clients.size()) + " entries, config says " +
                      std::to_string(cfg.client_count));
  const auto& first = clients.front().shard;
  for (const auto& c : clients) {
    if (c.shard.size() == 0) throw ConfigError("client " + std::to_string(c.id) + " has an empty shard");
    if (c.shard.feature_dim() != first.feature_dim() || c.shard.class_count != first.class_count)
      throw ConfigError("client shards disagree on feature dimension or class count");
    if (c.arch_index >= cfg.resolved_archs().size())
      throw ConfigError("client " + std::to_string(c.id) + " uses an unknown architecture");
  }
}

// Shard inputs replaced by F(x).
std::vector<ClientState> transform_clients(std::span<const ClientState> clients, const Network& fe) {
  std::vector<ClientState> out(clients.begin(), clients.end());
  for (auto& c : out) c.shard.inputs = fe.forward(c.shard.inputs);
  return out;
}

LabeledDataset transform_dataset(const LabeledDataset& ds, const Network& fe) {
  LabeledDataset out = ds;
  out.inputs = fe.forward(ds.inputs);
  return out;
}

enum class TargetKind { grouped, local, lg };

struct TargetStageInput {
  TargetKind kind = TargetKind::grouped;
  const GenModelParams* gen = nullptr;  // synthetic source, may be null when T_s == 0
  std::string stage = "tn";
  // Called before each round (0-based) with the server; used by update mode.
  std::function<void(std::size_t)> before_round;
};

// Stage (ii) and the baselines: T_TN rounds of local classifier training
// with per-architecture (and, for lg, first-layer) aggregation.
void run_target_stage(std::map<std::size_t, Network>& targets, std::span<const ClientState> clients,
                      const FederationConfig& cfg, const LabeledDataset* test, const TargetStageInput& in,
                      std::vector<CommCounts>& comm, std::vector<TraceRow>& trace,
                      std::map<std::size_t, double>* final_acc) {
  const auto shared = group_sizes(clients);
  std::vector<Network> local;
  if (in.kind == TargetKind::local)
    for (const auto& c : clients) local.push_back(targets.at(c.arch_index));

  std::size_t lg_begin = 0, lg_end = 0;
  if (in.kind == TargetKind::lg) {
    const Network& ref = targets.begin()->second;
    std::tie(lg_begin, lg_end) = ref.dense_param_range(0);
    for (auto& [m, net] : targets) {
      if (net.dense_count() == 0 || net.dense_param_range(0) != std::make_pair(lg_begin, lg_end) ||
          net.layers().front() != ref.layers().front())
        throw ConfigError("lg_partial needs the same first dense layer in every architecture");
      if (&net != &ref)
        std::copy(ref.params().begin() + lg_begin, ref.params().begin() + lg_end, net.params().begin() + lg_begin);
    }
  }

  auto evaluate = [&]() {
    std::map<std::size_t, double> acc;
    if (in.kind == TargetKind::local) {
      std::map<std::size_t, std::vector<double>> by_arch;
      for (std::size_t k = 0; k < clients.size(); ++k)
        by_arch[clients[k].arch_index].push_back(classifier_accuracy(local[k], *test));
      for (const auto& [m, v] : by_arch) acc[m] = mean_of(v);
    } else {
      acc = mean_accuracy(targets, *test).per_arch;
    }
    return acc;
  };

  for (std::size_t r = 0; r < cfg.t_tn; ++r) {
    if (in.before_round) in.before_round(r);
    const auto parts = participants(cfg, Stage::tn, r);
    std::vector<Network> out(parts.size());
    std::vector<double> losses(parts.size(), 0.0);
    parallel_for(parts.size(), cfg.threads, [&](std::size_t i) {
      const auto& c = clients[parts[i]];
      const Network& start = in.kind == TargetKind::local ? local[parts[i]] : targets.at(c.arch_index);
      out[i] = local_classifier_round(start, c.shard, in.gen, cfg, client_stream_seed(cfg.seed, Stage::tn, r, c.id),
                                      &losses[i]);
    });

    if (in.kind == TargetKind::local) {
      for (std::size_t i = 0; i < parts.size(); ++i) local[parts[i]] = std::move(out[i]);
    } else {
      std::vector<std::vector<double>> flats;
      std::vector<std::size_t> arch_of;
      for (std::size_t i = 0; i < parts.size(); ++i) {
        flats.push_back(out[i].flatten_params());
        arch_of.push_back(clients[parts[i]].arch_index);
      }
      for (auto& [m, flat] : aggregate_by_arch(flats, arch_of)) targets.at(m).unflatten_params(flat);
      if (in.kind == TargetKind::lg) {
        std::vector<std::vector<double>> firsts;
        for (const auto& f : flats)
          firsts.emplace_back(f.begin() + static_cast<std::ptrdiff_t>(lg_begin),
                              f.begin() + static_cast<std::ptrdiff_t>(lg_end));
        const auto shared_layer = aggregate(firsts);
        for (auto& [m, net] : targets)
          std::copy(shared_layer.begin(), shared_layer.end(), net.params().begin() + lg_begin);
      }
    }

    for (std::size_t idx : parts) {
      const auto& c = clients[idx];
      const double size = static_cast<double>(targets.at(c.arch_index).param_count());
      const bool group = shared.at(c.arch_index) >= 2;
      if (in.kind == TargetKind::grouped && group) {
        comm[idx].tn_up += size;
        comm[idx].tn_down += size;
      } else if (in.kind == TargetKind::lg) {
        const double first = static_cast<double>(lg_end - lg_begin);
        comm[idx].fe_up += first;
        comm[idx].fe_down += first;
        if (group) {
          comm[idx].tn_up += size - first;
          comm[idx].tn_down += size - first;
        }
      }
    }

    const double loss = mean_of(losses);
    if (test) {
      const auto acc = evaluate();
      push_accuracy_rows(trace, r + 1, in.stage, acc, loss, comm);
      if (final_acc) *final_acc = acc;
    } else {
      trace.push_back({r + 1, in.stage, "mean", std::nullopt, loss, total_up(comm), total_down(comm)});
    }
  }
  if (cfg.t_tn == 0 && test && final_acc) *final_acc = evaluate();
  if (in.kind == TargetKind::local) {
    // Report the first client's model of each architecture as the server copy.
    for (std::size_t k = clients.size(); k-- > 0;) targets[clients[k].arch_index] = local[k];
  }
}

void finish(RunResult& result) {
  std::vector<double> values;
  for (const auto& [m, acc] : result.arch_accuracy) values.push_back(acc);
  result.mean_accuracy = mean_of(values);
}

GenModelSpec resolved_gen_spec(const FederationConfig& cfg, std::size_t classes, std::size_t dim,
                               std::optional<OutputRange> range) {
  GenModelSpec spec = cfg.gen;
  spec.classes = classes;
  spec.sample_dim = dim;
  if (range) spec.range = *range;
  return spec;
}

void check_strict(const FederationConfig& cfg) {
  if (cfg.strict && cfg.t_s > 0 && ka_round_count(cfg) == 0)
    throw ConfigError("strict mode: synthetic epochs requested from an untrained generator (t_ka = 0)");
}

}  // namespace

std::vector<ArchSpec> default_arch_zoo() {
  using A = Activation;
  return {
      {{32}, A::relu},          {{32, 16}, A::relu},       {{32, 32}, A::tanh},     {{32, 24, 16}, A::relu},
      {{32, 8}, A::leaky_relu}, {{32}, A::tanh},           {{32, 64}, A::relu},     {{32, 16, 16}, A::leaky_relu},
      {{32, 48}, A::tanh},      {{32, 32, 32}, A::relu},
  };
}

Network build_classifier(const ArchSpec& arch, std::size_t in_dim, std::size_t classes) {
  return Network::mlp(in_dim, arch.hidden, classes, ActivationSpec{arch.act, 0.2});
}

std::string to_string(Method m) {
  switch (m) {
    case Method::gefl:
      return "gefl";
    case Method::geflf:
      return "geflf";
    case Method::grouped_fedavg:
      return "grouped_fedavg";
    case Method::local_only:
      return "local_only";
    case Method::lg_partial:
      return "lg_partial";
  }
  return "?";
}

Method method_from_string(const std::string& name) {
  for (auto m : {Method::gefl, Method::geflf, Method::grouped_fedavg, Method::local_only, Method::lg_partial})
    if (to_string(m) == name) return m;
  throw ConfigError("unknown method '" + name + "'");
}

std::string to_string(GanMode m) { return m == GanMode::freeze ? "freeze" : "update"; }

GanMode gan_mode_from_string(const std::string& name) {
  if (name == "freeze") return GanMode::freeze;
  if (name == "update") return GanMode::update;
  throw ConfigError("unknown gan_mode '" + name + "'");
}

void FederationConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ConfigError(std::string(name) + " must be positive");
  };
  positive(batch, "batch");
  positive(client_count, "client_count");
  positive(arch_count, "arch_count");
  positive(threads, "threads");
  if (!(alpha > 0.0) || !std::isfinite(alpha)) throw ConfigError("alpha must be positive and finite");
  if (beta && (!(*beta >= 0.0) || !std::isfinite(*beta))) throw ConfigError("beta must be non-negative and finite");
  if (!(guidance_w >= 0.0) || !std::isfinite(guidance_w)) throw ConfigError("guidance_w must be finite and >= 0");
  if (!(participation > 0.0 && participation <= 1.0)) throw ConfigError("participation must lie in (0, 1]");
  if (gan_mode == GanMode::update && gen.family != GenFamily::cgan)
    throw ConfigError("gan_mode = update is only valid for the cgan family");
  if (archs.empty() && arch_count > default_arch_zoo().size())
    throw ConfigError("arch_count exceeds the built-in zoo of " + std::to_string(default_arch_zoo().size()));
  if (!archs.empty() && archs.size() != arch_count) throw ConfigError("archs list length differs from arch_count");
  if (homogeneity_level > fe_trunk.size() + 1)
    throw ConfigError("homogeneity_level exceeds " + std::to_string(fe_trunk.size() + 1));
  for (auto w : fe_trunk) positive(w, "fe_trunk width");
  if (gen.hidden.empty()) throw ConfigError("generative model needs at least one hidden layer");
  if (gen.family == GenFamily::cddpm && guidance_w > 0.0 && gen.uncond_drop_prob == 0.0)
    throw ConfigError("guidance_w > 0 needs uncond_drop_prob > 0");
}

std::vector<ArchSpec> FederationConfig::resolved_archs() const {
  if (!archs.empty()) return archs;
  auto zoo = default_arch_zoo();
  zoo.resize(std::min(arch_count, zoo.size()));
  return zoo;
}

GenHyper FederationConfig::gen_hyper() const {
  GenHyper h = default_gen_hyper(gen.family);
  if (beta) h.lr = *beta;
  return h;
}

std::vector<ClientState> make_clients(const LabeledDataset& pool, const FederationConfig& cfg, double fraction) {
  const auto shards = partition_iid(pool, {cfg.client_count, fraction, derive_seed(cfg.seed, {0x5A4D})});
  std::vector<ClientState> clients;
  for (std::size_t k = 0; k < shards.size(); ++k) clients.push_back({k, k % cfg.arch_count, shards[k]});
  return clients;
}

CommCounts& CommCounts::operator+=(const CommCounts& o) {
  fe_up += o.fe_up;
  fe_down += o.fe_down;
  ka_up += o.ka_up;
  ka_down += o.ka_down;
  tn_up += o.tn_up;
  tn_down += o.tn_down;
  return *this;
}

std::vector<double> aggregate(std::span<const std::vector<double>> param_sets) {
  if (param_sets.empty()) throw DomainError("aggregate: empty parameter list");
  const std::size_t n = param_sets.front().size();
  for (const auto& p : param_sets)
    if (p.size() != n) throw DomainError("aggregate: parameter vectors differ in length");
  std::vector<double> out(n, 0.0);
  for (const auto& p : param_sets)
    for (std::size_t i = 0; i < n; ++i) out[i] += p[i];
  const double count = static_cast<double>(param_sets.size());
  for (double& v : out) v /= count;
  return out;
}

std::map<std::size_t, std::vector<double>> aggregate_by_arch(std::span<const std::vector<double>> param_sets,
                                                             std::span<const std::size_t> arch_of) {
  if (param_sets.size() != arch_of.size()) throw DomainError("aggregate_by_arch: one architecture per set needed");
  std::map<std::size_t, std::vector<std::vector<double>>> groups;
  for (std::size_t i = 0; i < param_sets.size(); ++i) groups[arch_of[i]].push_back(param_sets[i]);
  std::map<std::size_t, std::vector<double>> out;
  for (auto& [m, sets] : groups) out[m] = aggregate(sets);
  return out;
}

std::uint64_t client_stream_seed(std::uint64_t seed, Stage stage, std::size_t round, std::size_t client) {
  return derive_seed(seed, {static_cast<std::uint64_t>(stage), round, client});
}

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch, Rng& rng) {
  if (batch == 0) throw DomainError("batch size must be positive");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  rng.shuffle(std::span<std::size_t>(order));
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < n; i += batch)
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(n, i + batch)));
  return out;
}

std::vector<std::size_t> participants(const FederationConfig& cfg, Stage stage, std::size_t round) {
  std::vector<std::size_t> ids(cfg.client_count);
  for (std::size_t k = 0; k < ids.size(); ++k) ids[k] = k;
  if (cfg.participation >= 1.0) return ids;
  const auto count = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(cfg.participation * static_cast<double>(cfg.client_count))));
  Rng rng(derive_seed(cfg.seed, {static_cast<std::uint64_t>(Stage::participation), static_cast<std::uint64_t>(stage),
                                 round}));
  rng.shuffle(std::span<std::size_t>(ids));
  ids.resize(count);
  std::sort(ids.begin(), ids.end());
  return ids;
}

std::size_t ka_round_count(const FederationConfig& cfg) {
  if (cfg.gan_mode == GanMode::update) return cfg.t_ka / 2 + cfg.t_tn;
  return cfg.t_ka;
}

GenModelParams local_generative_round(const GenModelParams& global, const LabeledDataset& shard,
                                      const FederationConfig& cfg, std::uint64_t stream_seed, double* mean_loss) {
  GenModelParams local = global;
  auto opt = make_gen_optimizer(local, cfg.gen_hyper());
  Rng rng(stream_seed);
  double sum = 0.0;
  std::size_t steps = 0;
  for (std::size_t e = 0; e < cfg.t_g; ++e) {
    for (const auto& idx : epoch_batches(shard.size(), cfg.batch, rng)) {
      const auto mb = shard.subset(idx);
      sum += gen_train_step(local, mb.inputs, mb.labels, opt, rng);
      ++steps;
    }
  }
  if (mean_loss) *mean_loss = steps ? sum / static_cast<double>(steps) : 0.0;
  return local;
}

Network local_classifier_round(const Network& start, const LabeledDataset& shard, const GenModelParams* gen,
                               const FederationConfig& cfg, std::uint64_t stream_seed, double* mean_loss) {
  Network net = start;
  auto opt = Optimizer::sgd(cfg.alpha);
  Rng rng(stream_seed);
  double sum = 0.0;
  std::size_t steps = 0;
  auto step = [&](const Tensor& x, std::span<const int> y) {
    const auto lg = loss_and_grad(net, x, y, LossKind::cross_entropy);
    opt.step(net.params(), lg.grad);
    sum += lg.loss;
    ++steps;
  };
  const std::size_t per_epoch = (shard.size() + cfg.batch - 1) / cfg.batch;
  if (cfg.t_s > 0) {
    if (!gen) throw UsageError("synthetic epochs requested without a generative model");
    const std::size_t classes = gen_classes(*gen);
    std::vector<int> labels(cfg.batch);
    for (std::size_t e = 0; e < cfg.t_s; ++e) {
      for (std::size_t s = 0; s < per_epoch; ++s) {
        for (auto& y : labels) y = static_cast<int>(rng.below(classes));
        step(gen_sample(*gen, labels, {cfg.guidance_w}, rng), labels);
      }
    }
  }
  for (std::size_t e = 0; e < cfg.t_r; ++e) {
    for (const auto& idx : epoch_batches(shard.size(), cfg.batch, rng)) {
      const auto mb = shard.subset(idx);
      step(mb.inputs, mb.labels);
    }
  }
  if (mean_loss) *mean_loss = steps ? sum / static_cast<double>(steps) : 0.0;
  return net;
}

KaOutcome generative_knowledge_aggregation(ServerState& server, std::span<const ClientState> clients,
                                           const FederationConfig& cfg, std::size_t first_round,
                                           std::size_t rounds, std::vector<CommCounts>& comm) {
  if (!server.gen) throw UsageError("generative aggregation without a generative model");
  const std::size_t classes = gen_classes(*server.gen);
  const std::size_t dim = gen_sample_dim(*server.gen);
  for (const auto& c : clients)
    if (c.shard.class_count != classes || c.shard.feature_dim() != dim)
      throw ConfigError("generative model dimensions do not match client " + std::to_string(c.id));
  if (comm.size() != clients.size()) comm.resize(clients.size());
  const double size = static_cast<double>(gen_param_count(*server.gen));
  KaOutcome result;
  for (std::size_t r = first_round; r < first_round + rounds; ++r) {
    const auto parts = participants(cfg, Stage::ka, r);
    std::vector<GenModelParams> local(parts.size());
    std::vector<double> losses(parts.size(), 0.0);
    parallel_for(parts.size(), cfg.threads, [&](std::size_t i) {
      const auto& c = clients[parts[i]];
      local[i] = local_generative_round(*server.gen, c.shard, cfg, client_stream_seed(cfg.seed, Stage::ka, r, c.id),
                                        &losses[i]);
    });
    std::vector<std::vector<double>> flats;
    for (const auto& p : local) flats.push_back(flatten_gen(p));
    unflatten_gen(*server.gen, aggregate(flats));
    for (std::size_t idx : parts) {
      comm[idx].ka_up += size;
      comm[idx].ka_down += size;
    }
    result.rows.push_back({r + 1, "ka", "gen", std::nullopt, mean_of(losses), total_up(comm), total_down(comm)});
    ++result.rounds;
  }
  return result;
}

std::vector<std::size_t> archs_in_use(std::span<const ClientState> clients) {
  std::set<std::size_t> s;
  for (const auto& c : clients) s.insert(c.arch_index);
  return {s.begin(), s.end()};
}

std::map<std::size_t, Network> initial_targets(const FederationConfig& cfg, std::span<const std::size_t> archs,
                                               std::size_t in_dim, std::size_t classes) {
  const auto zoo = cfg.resolved_archs();
  std::map<std::size_t, Network> out;
  for (std::size_t m : archs) {
    if (m >= zoo.size()) throw ConfigError("architecture index " + std::to_string(m) + " outside the zoo");
    Network net = build_classifier(zoo[m], in_dim, classes);
    Rng rng(derive_seed(cfg.seed, {static_cast<std::uint64_t>(Stage::target_init), m}));
    net.init_glorot(rng);
    out.emplace(m, std::move(net));
  }
  return out;
}

FeatureSplit split_for_homogeneity(const FederationConfig& cfg, std::size_t arch_index, std::size_t in_dim,
                                   std::size_t classes) {
  const auto zoo = cfg.resolved_archs();
  if (arch_index >= zoo.size()) throw ConfigError("architecture index outside the zoo");
  const std::size_t hl = cfg.homogeneity_level;
  const auto& trunk = cfg.fe_trunk;
  const ActivationSpec relu{Activation::relu};
  if (hl == 0) return {Network(), build_classifier(zoo[arch_index], in_dim, classes)};
  if (hl > trunk.size()) return {Network::mlp(in_dim, trunk, classes, relu), Network()};
  std::vector<LayerSpec> layers;
  std::size_t width = in_dim;
  for (std::size_t i = 0; i < hl; ++i) {
    layers.emplace_back(DenseSpec{width, trunk[i]});
    layers.emplace_back(relu);
    width = trunk[i];
  }
  return {Network(std::move(layers)), build_classifier(zoo[arch_index], width, classes)};
}

RunResult run_gefl(std::span<const ClientState> clients, const FederationConfig& cfg, const LabeledDataset* test) {
  cfg.validate();
  check_clients(clients, cfg);
  check_strict(cfg);
  const auto& proto = clients.front().shard;
  RunResult result;
  result.comm.assign(clients.size(), {});
  Rng gen_rng(derive_seed(cfg.seed, {static_cast<std::uint64_t>(Stage::gen_init)}));
  result.server.gen = make_gen_model(resolved_gen_spec(cfg, proto.class_count, proto.feature_dim(), std::nullopt),
                                     gen_rng);

  const bool update = cfg.gan_mode == GanMode::update;
  const std::size_t first_stage = update ? cfg.t_ka / 2 : cfg.t_ka;
  auto ka = generative_knowledge_aggregation(result.server, clients, cfg, 0, first_stage, result.comm);
  result.trace = std::move(ka.rows);
  result.ka_rounds = ka.rounds;

  const auto archs = archs_in_use(clients);
  result.server.targets = initial_targets(cfg, archs, proto.feature_dim(), proto.class_count);
  TargetStageInput in;
  in.kind = TargetKind::grouped;
  in.gen = &*result.server.gen;
  if (update) {
    in.before_round = [&](std::size_t r) {
      auto step = generative_knowledge_aggregation(result.server, clients, cfg, first_stage + r, 1, result.comm);
      result.trace.insert(result.trace.end(), step.rows.begin(), step.rows.end());
      result.ka_rounds += step.rounds;
    };
  }
  run_target_stage(result.server.targets, clients, cfg, test, in, result.comm, result.trace,
                   test ? &result.arch_accuracy : nullptr);
  finish(result);
  return result;
}

RunResult run_geflf(std::span<const ClientState> clients, const FederationConfig& cfg, const LabeledDataset* test) {
  cfg.validate();
  check_clients(clients, cfg);
  check_strict(cfg);
  const auto& proto = clients.front().shard;
  const std::size_t in_dim = proto.feature_dim();
  const std::size_t classes = proto.class_count;
  RunResult result;
  result.comm.assign(clients.size(), {});
  auto& server = result.server;

  const auto archs = archs_in_use(clients);
  {
    Rng fe_rng(derive_seed(cfg.seed, {static_cast<std::uint64_t>(Stage::target_init), 0xFE}));
    server.fe = split_for_homogeneity(cfg, archs.front(), in_dim, classes).fe;
    server.fe.init_glorot(fe_rng);
    for (std::size_t m : archs) {
      Network header = split_for_homogeneity(cfg, m, in_dim, classes).header;
      Rng rng(derive_seed(cfg.seed, {static_cast<std::uint64_t>(Stage::target_init), m}));
      header.init_glorot(rng);
      server.headers.emplace(m, std::move(header));
    }
  }

  // (i) warm-up: full-model training, FE averaged over all clients, headers per arch.
  FederationConfig warm = cfg;
  warm.t_s = 0;
  warm.t_r = cfg.t_w;
  const std::size_t fe_size = server.fe.param_count();
  for (std::size_t r = 0; r < cfg.t_fe; ++r) {
    const auto parts = participants(cfg, Stage::fe, r);
    std::vector<Network> out(parts.size());
    std::vector<double> losses(parts.size(), 0.0);
    parallel_for(parts.size(), cfg.threads, [&](std::size_t i) {
      const auto& c = clients[parts[i]];
      out[i] = local_classifier_round(concat(server.fe, server.headers.at(c.arch_index)), c.shard, nullptr, warm,
                                      client_stream_seed(cfg.seed, Stage::fe, r, c.id), &losses[i]);
    });
    std::vector<std::vector<double>> fe_parts, header_parts;
    std::vector<std::size_t> arch_of;
    for (std::size_t i = 0; i < parts.size(); ++i) {
      const auto flat = out[i].flatten_params();
      fe_parts.emplace_back(flat.begin(), flat.begin() + static_cast<std::ptrdiff_t>(fe_size));
      header_parts.emplace_back(flat.begin() + static_cast<std::ptrdiff_t>(fe_size), flat.end());
      arch_of.push_back(clients[parts[i]].arch_index);
    }
    server.fe.unflatten_params(aggregate(fe_parts));
    for (auto& [m, flat] : aggregate_by_arch(header_parts, arch_of)) server.headers.at(m).unflatten_params(flat);
    for (std::size_t idx : parts) {
      result.comm[idx].fe_up += static_cast<double>(fe_size);
      result.comm[idx].fe_down += static_cast<double>(fe_size);
    }
    if (test) {
      const auto acc = mean_accuracy(server.headers, *test, &server.fe).per_arch;
      push_accuracy_rows(result.trace, r + 1, "fe", acc, mean_of(losses), result.comm);
      result.arch_accuracy = acc;
    }
  }

  // (ii) feature-generative aggregation with the FE frozen.
  const auto feature_clients = transform_clients(clients, server.fe);
  const std::size_t feat_dim = feature_clients.front().shard.feature_dim();
  const std::optional<OutputRange> range =
      server.fe.empty() ? std::nullopt : std::optional<OutputRange>(OutputRange::unbounded);
  Rng gen_rng(derive_seed(cfg.seed, {static_cast<std::uint64_t>(Stage::gen_init)}));
  server.gen = make_gen_model(resolved_gen_spec(cfg, classes, feat_dim, range), gen_rng);
  const bool update = cfg.gan_mode == GanMode::update;
  const std::size_t first_stage = update ? cfg.t_ka / 2 : cfg.t_ka;
  auto ka = generative_knowledge_aggregation(server, feature_clients, cfg, 0, first_stage, result.comm);
  result.trace.insert(result.trace.end(), ka.rows.begin(), ka.rows.end());
  result.ka_rounds = ka.rounds;

  // (iii) header-only training on synthetic then real features.
  std::optional<LabeledDataset> feature_test;
  if (test) feature_test = transform_dataset(*test, server.fe);
  TargetStageInput in;
  in.kind = TargetKind::grouped;
  in.gen = &*server.gen;
  if (update) {
    in.before_round = [&](std::size_t r) {
      auto step = generative_knowledge_aggregation(server, feature_clients, cfg, first_stage + r, 1, result.comm);
      result.trace.insert(result.trace.end(), step.rows.begin(), step.rows.end());
      result.ka_rounds += step.rounds;
    };
  }
  std::map<std::size_t, double> final_acc;
  run_target_stage(server.headers, feature_clients, cfg, feature_test ? &*feature_test : nullptr, in, result.comm,
                   result.trace, test ? &final_acc : nullptr);
  if (test) result.arch_accuracy = final_acc;
  finish(result);
  return result;
}

RunResult run_baseline(Method kind, std::span<const ClientState> clients, const FederationConfig& cfg,
                       const LabeledDataset* test) {
  cfg.validate();
  check_clients(clients, cfg);
  TargetStageInput in;
  FederationConfig base = cfg;
  base.t_s = 0;
  switch (kind) {
    case Method::grouped_fedavg:
      in.kind = TargetKind::grouped;
      break;
    case Method::local_only:
      in.kind = TargetKind::local;
      break;
    case Method::lg_partial:
      in.kind = TargetKind::lg;
      break;
    default:
      throw UsageError("run_baseline: not a baseline method");
  }
  const auto& proto = clients.front().shard;
  RunResult result;
  result.comm.assign(clients.size(), {});
  result.server.targets = initial_targets(base, archs_in_use(clients), proto.feature_dim(), proto.class_count);
  run_target_stage(result.server.targets, clients, base, test, in, result.comm, result.trace,
                   test ? &result.arch_accuracy : nullptr);
  finish(result);
  return result;
}

RunResult run_method(Method method, std::span<const ClientState> clients, const FederationConfig& cfg,
                     const LabeledDataset* test) {
  switch (method) {
    case Method::gefl:
      return run_gefl(clients, cfg, test);
    case Method::geflf:
      return run_geflf(clients, cfg, test);
    default:
      return run_baseline(method, clients, cfg, test);
  }
}

}  // namespace gefl
