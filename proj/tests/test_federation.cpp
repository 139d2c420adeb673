#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <set>

#include "gefl/errors.hpp"
#include "gefl/federation.hpp"
#include "gefl/metrics.hpp"

using namespace gefl;

namespace {

FederationConfig small_config(std::size_t clients = 4, std::size_t archs = 4) {
  FederationConfig cfg;
  cfg.t_ka = 2;
  cfg.t_tn = 2;
  cfg.t_fe = 2;
  cfg.t_g = 1;
  cfg.t_r = 1;
  cfg.t_w = 1;
  cfg.batch = 16;
  cfg.client_count = clients;
  cfg.arch_count = archs;
  cfg.gen.hidden = {16};
  cfg.gen.latent_dim = 4;
  cfg.seed = 11;
  return cfg;
}

struct Fixture {
  LabeledDataset pool = make_blobs(3, 4, 40, 1.0, 5);
  LabeledDataset test = make_blobs(3, 4, 20, 1.0, 6);
};

std::vector<double> brute_mean(const std::vector<std::vector<double>>& sets) {
  std::vector<double> out(sets[0].size(), 0.0);
  for (std::size_t j = 0; j < out.size(); ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < sets.size(); ++i) s += sets[i][j];
    out[j] = s / static_cast<double>(sets.size());
  }
  return out;
}

}  // namespace

TEST(AggregateTest, SmallExample) {
  const std::vector<std::vector<double>> sets = {{1, 2}, {3, 4}};
  EXPECT_EQ(aggregate(sets), (std::vector<double>{2, 3}));
  const std::vector<std::vector<double>> one = {{0.1, -7.5}};
  EXPECT_EQ(aggregate(one), one[0]);
}

TEST(AggregateTest, Errors) {
  EXPECT_THROW(aggregate(std::vector<std::vector<double>>{}), DomainError);
  EXPECT_THROW(aggregate(std::vector<std::vector<double>>{{1, 2}, {1}}), DomainError);
  const std::vector<std::vector<double>> sets = {{1}, {2}};
  const std::vector<std::size_t> arch = {0};
  EXPECT_THROW(aggregate_by_arch(sets, arch), DomainError);
}

TEST(AggregateTest, MatchesBruteForceAndIsPermutationInvariant) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + rng.below(6), d = 1 + rng.below(20);
    std::vector<std::vector<double>> sets(n, std::vector<double>(d));
    for (auto& s : sets)
      for (auto& v : s) v = rng.normal();
    const auto mean = aggregate(sets);
    EXPECT_EQ(mean, brute_mean(sets));
    auto shuffled = sets;
    rng.shuffle(std::span<std::vector<double>>(shuffled));
    const auto other = aggregate(shuffled);
    for (std::size_t j = 0; j < d; ++j) EXPECT_NEAR(other[j], mean[j], 1e-12);
  }
}

TEST(AggregateTest, Linearity) {
  Rng rng(4);
  std::vector<std::vector<double>> a(3, std::vector<double>(5)), b = a, sum = a;
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 5; ++j) {
      a[i][j] = rng.normal();
      b[i][j] = rng.normal();
      sum[i][j] = 2.0 * a[i][j] + b[i][j];
    }
  const auto ma = aggregate(a), mb = aggregate(b), ms = aggregate(sum);
  for (std::size_t j = 0; j < 5; ++j) EXPECT_NEAR(ms[j], 2.0 * ma[j] + mb[j], 1e-12);
}

TEST(AggregateTest, ByArchGroups) {
  const std::vector<std::vector<double>> sets = {{1, 1}, {10}, {3, 5}, {20}, {30}};
  const std::vector<std::size_t> arch = {2, 0, 2, 0, 0};
  const auto out = aggregate_by_arch(sets, arch);
  ASSERT_EQ(out.size(), 2u);
  EXPECT_EQ(out.at(2), (std::vector<double>{2, 3}));
  EXPECT_EQ(out.at(0), (std::vector<double>{20}));
}

TEST(StreamsTest, EpochBatchesCoverEachIndexOnce) {
  Rng rng(9);
  for (std::size_t n : {1u, 7u, 64u, 65u}) {
    const auto batches = epoch_batches(n, 16, rng);
    EXPECT_EQ(batches.size(), (n + 15) / 16);
    std::vector<std::size_t> all;
    for (const auto& b : batches) all.insert(all.end(), b.begin(), b.end());
    std::sort(all.begin(), all.end());
    std::vector<std::size_t> expect(n);
    std::iota(expect.begin(), expect.end(), 0);
    EXPECT_EQ(all, expect);
  }
}

TEST(StreamsTest, ClientStreamsDiffer) {
  std::set<std::uint64_t> seen;
  for (auto stage : {Stage::ka, Stage::tn, Stage::fe})
    for (std::size_t r = 0; r < 3; ++r)
      for (std::size_t k = 0; k < 3; ++k) seen.insert(client_stream_seed(1, stage, r, k));
  EXPECT_EQ(seen.size(), 27u);
}

TEST(StreamsTest, PartialParticipation) {
  auto cfg = small_config(10, 2);
  EXPECT_EQ(participants(cfg, Stage::tn, 0).size(), 10u);
  cfg.participation = 0.3;
  const auto p = participants(cfg, Stage::tn, 4);
  EXPECT_EQ(p.size(), 3u);
  EXPECT_TRUE(std::is_sorted(p.begin(), p.end()));
  EXPECT_EQ(p, participants(cfg, Stage::tn, 4));
}

TEST(ClientsTest, ArchitectureRoundRobinAndEqualShards) {
  Fixture f;
  const auto cfg = small_config(6, 4);
  const auto clients = make_clients(f.pool, cfg, 1.0);
  ASSERT_EQ(clients.size(), 6u);
  for (std::size_t k = 0; k < 6; ++k) {
    EXPECT_EQ(clients[k].id, k);
    EXPECT_EQ(clients[k].arch_index, k % 4);
    EXPECT_EQ(clients[k].shard.size(), 120u / 6);
  }
}

TEST(ConfigTest, Validation) {
  auto cfg = small_config();
  EXPECT_NO_THROW(cfg.validate());
  cfg.alpha = -1;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = small_config();
  cfg.gan_mode = GanMode::update;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg.gen.family = GenFamily::cgan;
  EXPECT_NO_THROW(cfg.validate());
  cfg.homogeneity_level = 4;
  EXPECT_THROW(cfg.validate(), ConfigError);
  EXPECT_THROW(method_from_string("fedprox"), ConfigError);
  EXPECT_EQ(method_from_string("lg_partial"), Method::lg_partial);
}

TEST(ConfigTest, KaRoundCount) {
  auto cfg = small_config();
  cfg.t_ka = 7;
  cfg.t_tn = 4;
  EXPECT_EQ(ka_round_count(cfg), 7u);
  cfg.gan_mode = GanMode::update;
  EXPECT_EQ(ka_round_count(cfg), 3u + 4u);
}

TEST(ConfigTest, DefaultsFollowPaperTable) {
  const FederationConfig cfg;
  EXPECT_EQ(cfg.t_w, 5u);
  EXPECT_EQ(cfg.t_g, 5u);
  EXPECT_EQ(cfg.t_s, 1u);
  EXPECT_EQ(cfg.t_r, 5u);
  EXPECT_EQ(cfg.batch, 64u);
  EXPECT_EQ(cfg.alpha, 0.1);
}

TEST(ZooTest, SharedFirstLayer) {
  const auto zoo = default_arch_zoo();
  ASSERT_EQ(zoo.size(), 10u);
  std::set<std::vector<std::size_t>> distinct;
  for (const auto& a : zoo) {
    EXPECT_EQ(a.hidden.front(), 32u);
    const auto net = build_classifier(a, 8, 4);
    EXPECT_EQ(net.dense_param_range(0), std::make_pair(std::size_t{0}, std::size_t{8 * 32 + 32}));
    distinct.insert(a.hidden);
  }
  EXPECT_GE(distinct.size(), 8u);
}

TEST(KaTest, SingleClientEqualsCentralizedTraining) {
  Fixture f;
  auto cfg = small_config(1, 1);
  cfg.t_g = 2;
  const auto clients = make_clients(f.pool, cfg, 0.5);
  GenModelSpec spec = cfg.gen;
  spec.classes = 3;
  spec.sample_dim = 4;
  Rng init(1);
  ServerState server;
  server.gen = make_gen_model(spec, init);
  GenModelParams central = *server.gen;
  std::vector<CommCounts> comm;
  generative_knowledge_aggregation(server, clients, cfg, 0, 3, comm);

  for (std::size_t r = 0; r < 3; ++r) {
    auto opt = make_gen_optimizer(central, cfg.gen_hyper());
    Rng rng(client_stream_seed(cfg.seed, Stage::ka, r, 0));
    for (std::size_t e = 0; e < cfg.t_g; ++e)
      for (const auto& idx : epoch_batches(clients[0].shard.size(), cfg.batch, rng)) {
        const auto mb = clients[0].shard.subset(idx);
        gen_train_step(central, mb.inputs, mb.labels, opt, rng);
      }
  }
  EXPECT_EQ(flatten_gen(*server.gen), flatten_gen(central));
  const double size = static_cast<double>(gen_param_count(central));
  EXPECT_EQ(comm[0].ka_up, 3 * size);
  EXPECT_EQ(comm[0].ka_down, 3 * size);
}

TEST(KaTest, ServerModelIsMeanOfLocalModels) {
  Fixture f;
  const auto cfg = small_config(3, 3);
  const auto clients = make_clients(f.pool, cfg, 1.0);
  GenModelSpec spec = cfg.gen;
  spec.classes = 3;
  spec.sample_dim = 4;
  Rng init(2);
  ServerState server;
  server.gen = make_gen_model(spec, init);
  const auto start = *server.gen;
  std::vector<CommCounts> comm;
  const auto out = generative_knowledge_aggregation(server, clients, cfg, 5, 1, comm);
  std::vector<std::vector<double>> locals;
  for (const auto& c : clients)
    locals.push_back(
        flatten_gen(local_generative_round(start, c.shard, cfg, client_stream_seed(cfg.seed, Stage::ka, 5, c.id), nullptr)));
  EXPECT_EQ(flatten_gen(*server.gen), brute_mean(locals));
  ASSERT_EQ(out.rows.size(), 1u);
  EXPECT_EQ(out.rows[0].round, 6u);
  EXPECT_EQ(out.rows[0].arch, "gen");
  EXPECT_FALSE(out.rows[0].accuracy);
}

TEST(IdentityTest, NoSyntheticEpochsEqualsGroupedFedAvg) {
  Fixture f;
  auto cfg = small_config(6, 3);
  cfg.t_s = 0;
  const auto clients = make_clients(f.pool, cfg, 1.0);
  const auto gefl = run_gefl(clients, cfg, &f.test);
  const auto fedavg = run_baseline(Method::grouped_fedavg, clients, cfg, &f.test);
  EXPECT_EQ(gefl.server.targets, fedavg.server.targets);
  EXPECT_EQ(gefl.arch_accuracy, fedavg.arch_accuracy);
}

TEST(IdentityTest, DistinctArchsGroupedEqualsLocalOnly) {
  Fixture f;
  const auto cfg = small_config(4, 4);
  const auto clients = make_clients(f.pool, cfg, 1.0);
  const auto grouped = run_baseline(Method::grouped_fedavg, clients, cfg, &f.test);
  const auto local = run_baseline(Method::local_only, clients, cfg, &f.test);
  EXPECT_EQ(grouped.server.targets, local.server.targets);
  EXPECT_EQ(grouped.arch_accuracy, local.arch_accuracy);
  for (const auto& c : grouped.comm) EXPECT_EQ(c.up(), 0.0);
}

TEST(IdentityTest, SingleLayerLgEqualsFedAvg) {
  Fixture f;
  auto cfg = small_config(4, 1);
  cfg.archs = {ArchSpec{{}, Activation::relu}};
  const auto clients = make_clients(f.pool, cfg, 1.0);
  const auto lg = run_baseline(Method::lg_partial, clients, cfg, &f.test);
  const auto fedavg = run_baseline(Method::grouped_fedavg, clients, cfg, &f.test);
  EXPECT_EQ(lg.server.targets, fedavg.server.targets);
  EXPECT_EQ(lg.arch_accuracy, fedavg.arch_accuracy);
}

TEST(BaselineTest, LgSharesFirstLayerAcrossArchs) {
  Fixture f;
  const auto cfg = small_config(4, 4);
  const auto clients = make_clients(f.pool, cfg, 1.0);
  const auto lg = run_baseline(Method::lg_partial, clients, cfg, &f.test);
  const auto [lo, hi] = lg.server.targets.begin()->second.dense_param_range(0);
  const auto ref = lg.server.targets.begin()->second.params();
  for (const auto& [m, net] : lg.server.targets)
    EXPECT_TRUE(std::equal(ref.begin() + lo, ref.begin() + hi, net.params().begin() + lo));
  for (const auto& c : lg.comm) {
    EXPECT_EQ(c.fe_up, static_cast<double>(cfg.t_tn * (hi - lo)));
    EXPECT_EQ(c.tn_up, 0.0);
  }
}

TEST(BaselineTest, LocalOnlyIgnoresOtherClients) {
  Fixture f;
  const auto cfg = small_config(4, 2);
  auto clients = make_clients(f.pool, cfg, 1.0);
  const auto before = run_baseline(Method::local_only, clients, cfg, &f.test);
  clients[1].shard = make_blobs(3, 4, 10, 2.0, 99);
  const auto after = run_baseline(Method::local_only, clients, cfg, &f.test);
  EXPECT_EQ(before.arch_accuracy.at(0), after.arch_accuracy.at(0));
  EXPECT_EQ(before.server.targets.at(0), after.server.targets.at(0));
  EXPECT_NE(before.server.targets.at(1), after.server.targets.at(1));
}

TEST(GeflTest, TraceShapeAndMonotoneComm) {
  Fixture f;
  const auto cfg = small_config(4, 2);
  const auto clients = make_clients(f.pool, cfg, 1.0);
  const auto result = run_gefl(clients, cfg, &f.test);
  // 2 ka rows, then per tn round 2 arch rows and a mean row.
  ASSERT_EQ(result.trace.size(), 2u + 2u * 3u);
  EXPECT_EQ(result.trace[0].stage, "ka");
  EXPECT_EQ(result.trace.back().arch, "mean");
  EXPECT_EQ(*result.trace.back().accuracy, result.mean_accuracy);
  for (std::size_t i = 1; i < result.trace.size(); ++i) {
    EXPECT_GE(result.trace[i].comm_up, result.trace[i - 1].comm_up);
    EXPECT_GE(result.trace[i].comm_down, result.trace[i - 1].comm_down);
  }
  EXPECT_EQ(result.ka_rounds, 2u);
}

TEST(GeflTest, ParallelClientsAreDeterministic) {
  Fixture f;
  auto cfg = small_config(4, 2);
  const auto clients = make_clients(f.pool, cfg, 1.0);
  for (auto method : {Method::gefl, Method::geflf, Method::lg_partial}) {
    cfg.threads = 1;
    const auto serial = run_method(method, clients, cfg, &f.test);
    cfg.threads = 3;
    const auto parallel = run_method(method, clients, cfg, &f.test);
    EXPECT_EQ(serial.trace, parallel.trace);
    EXPECT_EQ(serial.server.targets, parallel.server.targets);
    EXPECT_EQ(serial.server.headers, parallel.server.headers);
  }
}

TEST(GeflTest, UpdateModeInterleavesGenerativeRounds) {
  Fixture f;
  auto cfg = small_config(4, 2);
  cfg.gen.family = GenFamily::cgan;
  cfg.gan_mode = GanMode::update;
  cfg.t_ka = 4;
  cfg.t_tn = 3;
  const auto clients = make_clients(f.pool, cfg, 1.0);
  const auto result = run_gefl(clients, cfg, &f.test);
  EXPECT_EQ(result.ka_rounds, 2u + 3u);
  std::vector<std::string> stages;
  for (const auto& row : result.trace)
    if (stages.empty() || stages.back() != row.stage) stages.push_back(row.stage);
  EXPECT_EQ(stages, (std::vector<std::string>{"ka", "tn", "ka", "tn", "ka", "tn"}));
}

TEST(GeflTest, StrictModeRejectsUntrainedGenerator) {
  Fixture f;
  auto cfg = small_config(2, 2);
  cfg.t_ka = 0;
  cfg.strict = true;
  const auto clients = make_clients(f.pool, cfg, 1.0);
  EXPECT_THROW(run_gefl(clients, cfg, &f.test), ConfigError);
  cfg.strict = false;
  EXPECT_NO_THROW(run_gefl(clients, cfg, &f.test));
}

TEST(GeflTest, ClientCountMismatch) {
  Fixture f;
  auto cfg = small_config(4, 2);
  const auto clients = make_clients(f.pool, cfg, 1.0);
  cfg.client_count = 5;
  EXPECT_THROW(run_gefl(clients, cfg, &f.test), ConfigError);
}

TEST(GeflfTest, WarmupAveragesFeatureExtractorOverAllClients) {
  Fixture f;
  auto cfg = small_config(4, 2);
  cfg.t_fe = 1;
  cfg.t_ka = 0;
  cfg.t_tn = 0;
  cfg.t_s = 0;
  const auto clients = make_clients(f.pool, cfg, 1.0);
  const auto result = run_geflf(clients, cfg, &f.test);

  Rng fe_rng(derive_seed(cfg.seed, {static_cast<std::uint64_t>(Stage::target_init), 0xFE}));
  Network fe = split_for_homogeneity(cfg, 0, 4, 3).fe;
  fe.init_glorot(fe_rng);
  std::map<std::size_t, Network> headers;
  for (std::size_t m : {0u, 1u}) {
    Network h = split_for_homogeneity(cfg, m, 4, 3).header;
    Rng rng(derive_seed(cfg.seed, {static_cast<std::uint64_t>(Stage::target_init), m}));
    h.init_glorot(rng);
    headers.emplace(m, h);
  }
  FederationConfig warm = cfg;
  warm.t_r = cfg.t_w;
  std::vector<std::vector<double>> fe_parts;
  for (const auto& c : clients) {
    const auto net = local_classifier_round(concat(fe, headers.at(c.arch_index)), c.shard, nullptr, warm,
                                            client_stream_seed(cfg.seed, Stage::fe, 0, c.id), nullptr);
    const auto flat = net.flatten_params();
    fe_parts.emplace_back(flat.begin(), flat.begin() + static_cast<std::ptrdiff_t>(fe.param_count()));
  }
  EXPECT_EQ(result.server.fe.flatten_params(), brute_mean(fe_parts));
  EXPECT_EQ(result.comm[0].fe_up, static_cast<double>(fe.param_count()));
}

TEST(GeflfTest, FeatureExtractorFrozenAfterWarmup) {
  Fixture f;
  auto cfg = small_config(4, 2);
  cfg.t_tn = 0;
  const auto clients = make_clients(f.pool, cfg, 1.0);
  const auto short_run = run_geflf(clients, cfg, &f.test);
  cfg.t_tn = 3;
  const auto long_run = run_geflf(clients, cfg, &f.test);
  EXPECT_EQ(short_run.server.fe, long_run.server.fe);
  EXPECT_NE(short_run.server.headers, long_run.server.headers);
  EXPECT_EQ(gen_sample_dim(*long_run.server.gen), cfg.fe_trunk[0]);
}

TEST(GeflfTest, FullHomogeneityLeavesNothingForHeaders) {
  Fixture f;
  auto cfg = small_config(4, 2);
  cfg.homogeneity_level = cfg.fe_trunk.size() + 1;
  const auto clients = make_clients(f.pool, cfg, 1.0);
  const auto result = run_geflf(clients, cfg, &f.test);
  for (const auto& [m, h] : result.server.headers) EXPECT_EQ(h.param_count(), 0u);
  double warm_mean = 0.0;
  for (const auto& row : result.trace)
    if (row.stage == "fe" && row.arch == "mean") warm_mean = *row.accuracy;
  EXPECT_EQ(result.mean_accuracy, warm_mean);
}

TEST(GeflfTest, ZeroHomogeneityIsPlainGenerativeFederation) {
  Fixture f;
  auto cfg = small_config(4, 2);
  cfg.homogeneity_level = 0;
  const auto clients = make_clients(f.pool, cfg, 1.0);
  const auto result = run_geflf(clients, cfg, &f.test);
  EXPECT_TRUE(result.server.fe.empty());
  EXPECT_EQ(gen_sample_dim(*result.server.gen), 4u);
  for (const auto& c : result.comm) EXPECT_EQ(c.fe_up, 0.0);
}
