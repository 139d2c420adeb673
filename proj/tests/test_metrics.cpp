#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "gefl/errors.hpp"
#include "gefl/metrics.hpp"

using namespace gefl;

namespace {

Tensor random_matrix(std::size_t rows, std::size_t cols, Rng& rng) {
  Tensor t = Tensor::matrix(rows, cols);
  for (double& v : t.data()) v = rng.normal();
  return t;
}

double brute_mnd(const Tensor& p, const Tensor& s, const Tensor& v) {
  double sum = 0.0;
  for (std::size_t i = 0; i < p.rows(); ++i) {
    double ds = std::numeric_limits<double>::infinity(), dv = ds;
    for (std::size_t j = 0; j < s.rows(); ++j) {
      double a = 0.0, b = 0.0;
      for (std::size_t c = 0; c < p.cols(); ++c) {
        a += (p(i, c) - s(j, c)) * (p(i, c) - s(j, c));
        b += (p(i, c) - v(j, c)) * (p(i, c) - v(j, c));
      }
      ds = std::min(ds, a);
      dv = std::min(dv, b);
    }
    sum += std::sqrt(dv) / std::sqrt(ds);
  }
  return sum / static_cast<double>(p.rows());
}

FederationConfig ledger_config() {
  FederationConfig cfg;
  cfg.t_ka = 3;
  cfg.t_tn = 2;
  cfg.t_fe = 2;
  cfg.t_g = 1;
  cfg.t_r = 1;
  cfg.t_w = 1;
  cfg.batch = 32;
  cfg.client_count = 5;
  cfg.arch_count = 3;
  cfg.gen.hidden = {8};
  cfg.gen.latent_dim = 2;
  return cfg;
}

}  // namespace

TEST(AccuracyTest, CountsCorrectPredictions) {
  Network net({DenseSpec{2, 2}});
  // logits = x, so the prediction is the larger coordinate.
  std::vector<double> p = {1, 0, 0, 1, 0, 0};
  net.unflatten_params(p);
  LabeledDataset ds;
  ds.inputs = Tensor::matrix(4, 2, {2, 1, 0, 3, 5, 4, 1, 2});
  ds.labels = {0, 1, 1, 0};
  ds.class_count = 2;
  EXPECT_DOUBLE_EQ(classifier_accuracy(net, ds), 0.5);
  std::map<std::size_t, Network> targets = {{0, net}, {3, net}};
  const auto report = mean_accuracy(targets, ds);
  EXPECT_DOUBLE_EQ(report.mean, 0.5);
  EXPECT_EQ(report.per_arch.size(), 2u);
  // A feature extractor that swaps the coordinates flips every prediction.
  Network swap({DenseSpec{2, 2}});
  std::vector<double> q = {0, 1, 1, 0, 0, 0};
  swap.unflatten_params(q);
  EXPECT_DOUBLE_EQ(mean_accuracy(targets, ds, &swap).mean, 0.5);
  ds.labels = {0, 1, 0, 1};
  EXPECT_DOUBLE_EQ(classifier_accuracy(net, ds), 1.0);
  EXPECT_DOUBLE_EQ(mean_accuracy(targets, ds, &swap).mean, 0.0);
}

TEST(AccuracyTest, EmptyInputs) {
  Network net({DenseSpec{2, 2}});
  LabeledDataset empty;
  EXPECT_THROW(classifier_accuracy(net, empty), DomainError);
  EXPECT_THROW(mean_accuracy({}, make_blobs(2, 2, 1, 1.0, 0)), DomainError);
}

TEST(MndTest, MatchesBruteForce) {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t d = 1 + rng.below(5), n = 1 + rng.below(10), m = 1 + rng.below(10);
    const auto p = random_matrix(n, d, rng), s = random_matrix(m, d, rng), v = random_matrix(m, d, rng);
    const auto report = mnd_ratio(p, s, v);
    EXPECT_EQ(report.mean_ratio, brute_mnd(p, s, v));
    EXPECT_EQ(report.ratios.size(), n);
  }
}

TEST(MndTest, IdenticalSetsGiveOne) {
  Rng rng(6);
  const auto p = random_matrix(20, 3, rng), s = random_matrix(15, 3, rng);
  EXPECT_EQ(mnd_ratio(p, s, s).mean_ratio, 1.0);
}

TEST(MndTest, MemorizedSamplesScoreHigh) {
  Rng rng(7);
  const auto probes = random_matrix(30, 4, rng);
  Tensor near = probes;
  for (double& x : near.data()) x += 1e-3 * rng.normal();
  const auto validation = random_matrix(30, 4, rng);
  EXPECT_GT(mnd_ratio(probes, near, validation).mean_ratio, 100.0);
}

TEST(MndTest, ExactCopiesAreCountedAndExcluded) {
  const Tensor p = Tensor::matrix(2, 1, {0.0, 5.0});
  const Tensor s = Tensor::matrix(2, 1, {0.0, 10.0});
  const Tensor v = Tensor::matrix(2, 1, {1.0, 2.0});
  const auto r = mnd_ratio(p, s, v);
  EXPECT_EQ(r.duplicate_hits, 1u);
  ASSERT_EQ(r.ratios.size(), 1u);
  EXPECT_DOUBLE_EQ(r.mean_ratio, 3.0 / 5.0);
  EXPECT_THROW(mnd_ratio(Tensor::matrix(1, 1, {0.0}), s, v), DomainError);
}

TEST(MndTest, SizeAndShapeErrors) {
  Rng rng(8);
  const auto p = random_matrix(3, 2, rng);
  EXPECT_THROW(mnd_ratio(p, random_matrix(4, 2, rng), random_matrix(3, 2, rng)), DomainError);
  EXPECT_THROW(mnd_ratio(p, random_matrix(3, 3, rng), random_matrix(3, 3, rng)), ShapeError);
}

TEST(MndTest, EmbeddingDistances) {
  Rng rng(9);
  const auto p = random_matrix(10, 3, rng), s = random_matrix(10, 3, rng), v = random_matrix(10, 3, rng);
  Network emb({DenseSpec{3, 2}});
  emb.init_glorot(rng);
  const auto r = mnd_ratio(p, s, v, &emb);
  EXPECT_EQ(r.distance, DistanceKind::probe_feature);
  EXPECT_EQ(r.mean_ratio, brute_mnd(emb.forward(p), emb.forward(s), emb.forward(v)));
}

TEST(InversionTest, RecoversInputOfFullRankLayer) {
  Rng rng(10);
  const std::size_t d = 16;
  Network fe({DenseSpec{d, d}});
  std::vector<double> w(d * d + d, 0.0);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) w[i * d + j] = (i == j ? 1.0 : 0.0) + 0.1 * rng.normal() / std::sqrt(d);
  fe.unflatten_params(w);
  Tensor x = Tensor::matrix(1, d);
  for (double& v : x.data()) v = rng.uniform(0.1, 0.9);
  const Tensor f = fe.forward(x);
  const auto result = invert_feature(fe, f.data(), {2000, 0.1, 0.0});
  double err = 0.0;
  for (std::size_t j = 0; j < d; ++j) err += (result.x.data()[j] - x.data()[j]) * (result.x.data()[j] - x.data()[j]);
  EXPECT_LE(std::sqrt(err), 1e-3);
  EXPECT_EQ(result.residual_trace.size(), 2001u);
}

TEST(InversionTest, ResidualNeverIncreasesAndPlateausBehindBottleneck) {
  Rng rng(11);
  const std::size_t d = 16;
  Network fe({DenseSpec{d, 4}, ActivationSpec{Activation::relu}, DenseSpec{4, d}});
  fe.init_glorot(rng);
  std::vector<double> target(d);
  for (double& v : target) v = rng.normal();
  const auto result = invert_feature(fe, target, {800, 0.05, 1e-3});
  for (std::size_t i = 1; i < result.residual_trace.size(); ++i)
    EXPECT_LE(result.residual_trace[i], result.residual_trace[i - 1]);
  EXPECT_GT(result.residual, 1e-2);
  const double late = result.residual_trace[700];
  EXPECT_LE(late - result.residual, 1e-3 * late);
  for (double v : result.x.data()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(InversionTest, ContractErrors) {
  Network fe({DenseSpec{5, 3}});
  std::vector<double> f(3, 0.0);
  EXPECT_THROW(invert_feature(fe, f, {10, 0.1, 1e-3}), ConfigError);
  EXPECT_NO_THROW(invert_feature(fe, f, {10, 0.1, 0.0}));
  EXPECT_THROW(invert_feature(fe, std::vector<double>(2, 0.0), {10, 0.1, 0.0}), ShapeError);
  EXPECT_THROW(invert_feature(Network(), f, {}), ConfigError);
}

TEST(LedgerTest, HandComputedClosedForms) {
  auto cfg = ledger_config();
  // in 4, classes 3. Arch 0 {32}: 4*32+32 + 32*3+3 = 259.
  // Arch 1 {32,16}: 160 + 32*16+16 + 16*3+3 = 739. Arch 2 {32,32}: 160 + 1056 + 99 = 1315.
  const std::vector<std::size_t> arch = {0, 1, 2, 0, 1};
  LedgerSizes sizes;
  sizes.gen = 1000;
  sizes.target = {{0, 259}, {1, 739}, {2, 1315}};
  sizes.lg_shared = 160;
  const auto gefl = comm_ledger(Method::gefl, cfg, arch, sizes);
  EXPECT_EQ(gefl.per_client[0].ka_up, 3000.0);
  EXPECT_EQ(gefl.per_client[0].tn_up, 2 * 259.0);
  EXPECT_EQ(gefl.per_client[2].tn_up, 0.0);  // arch 2 has one client
  EXPECT_EQ(gefl.total.up(), 5 * 3000.0 + 2 * (2 * 259.0 + 2 * 739.0));
  const auto lg = comm_ledger(Method::lg_partial, cfg, arch, sizes);
  EXPECT_EQ(lg.per_client[2].up(), 2 * 160.0);
  EXPECT_EQ(lg.per_client[1].up(), 2 * 160.0 + 2 * (739.0 - 160.0));
  EXPECT_EQ(comm_ledger(Method::local_only, cfg, arch, sizes).total.up(), 0.0);
  cfg.gan_mode = GanMode::update;
  cfg.gen.family = GenFamily::cgan;
  EXPECT_EQ(comm_ledger(Method::gefl, cfg, arch, sizes).per_client[0].ka_down, (1 + 2) * 1000.0);

  const auto computed = ledger_sizes(Method::gefl, ledger_config(), arch, 4, 3);
  EXPECT_EQ(computed.target, sizes.target);
}

TEST(LedgerTest, MatchesSimulatedTraffic) {
  const auto pool = make_blobs(3, 4, 30, 1.0, 1);
  for (auto method : {Method::gefl, Method::geflf, Method::grouped_fedavg, Method::local_only, Method::lg_partial}) {
    for (double participation : {1.0}) {
      auto cfg = ledger_config();
      cfg.participation = participation;
      const auto clients = make_clients(pool, cfg, 1.0);
      std::vector<std::size_t> arch;
      for (const auto& c : clients) arch.push_back(c.arch_index);
      const auto result = run_method(method, clients, cfg, nullptr);
      const auto ledger = comm_ledger(method, cfg, arch, ledger_sizes(method, cfg, arch, 4, 3));
      EXPECT_EQ(result.comm, ledger.per_client) << to_string(method);
      EXPECT_EQ(result.trace.back().comm_up, ledger.total.up()) << to_string(method);
    }
  }
}

TEST(EvalModeTest, SynOnlyDropsRealEpochs) {
  const auto pool = make_blobs(3, 4, 30, 1.0, 1);
  const auto test = make_blobs(3, 4, 10, 1.0, 2);
  auto cfg = ledger_config();
  const auto clients = make_clients(pool, cfg, 1.0);
  const double syn = eval_mode(clients, cfg, test, EvalMode::syn_only);
  auto no_real = cfg;
  no_real.t_r = 0;
  EXPECT_EQ(syn, run_gefl(clients, no_real, &test).mean_accuracy);
  EXPECT_EQ(eval_mode(clients, cfg, test, EvalMode::real_plus_syn), run_gefl(clients, cfg, &test).mean_accuracy);
  EXPECT_EQ(eval_mode_from_string(to_string(EvalMode::syn_only)), EvalMode::syn_only);
  EXPECT_THROW(eval_mode_from_string("both"), ConfigError);
}
