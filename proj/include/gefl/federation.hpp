#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gefl/datasets.hpp"
#include "gefl/genmodels.hpp"
#include "gefl/nn.hpp"

namespace gefl {

// Hidden widths and activation of one target-network architecture.
struct ArchSpec {
  std::vector<std::size_t> hidden;
  Activation act = Activation::relu;
  bool operator==(const ArchSpec&) const = default;
};

// Ten MLP classifiers of differing depth, width and activation. Every entry
// starts with a width-32 hidden layer, so the first dense layer has the same
// shape across the zoo.
std::vector<ArchSpec> default_arch_zoo();

Network build_classifier(const ArchSpec& arch, std::size_t in_dim, std::size_t classes);

enum class Method { gefl, geflf, grouped_fedavg, local_only, lg_partial };
enum class GanMode { freeze, update };

std::string to_string(Method m);
Method method_from_string(const std::string& name);
std::string to_string(GanMode m);
GanMode gan_mode_from_string(const std::string& name);

struct FederationConfig {
  std::size_t t_ka = 100;
  std::size_t t_tn = 50;
  std::size_t t_fe = 20;
  std::size_t t_g = 5;
  std::size_t t_s = 1;
  std::size_t t_r = 5;
  std::size_t t_w = 5;
  double alpha = 0.1;
  std::optional<double> beta;  // generative lr; family default when absent
  std::size_t batch = 64;
  std::size_t client_count = 10;
  std::size_t arch_count = 10;
  std::vector<ArchSpec> archs;  // empty: the first arch_count entries of default_arch_zoo()
  GenModelSpec gen;             // classes and sample_dim are filled in from the data
  double guidance_w = 0.0;
  GanMode gan_mode = GanMode::freeze;
  // GeFL-F: number of leading fe_trunk layers shared by every client.
  // fe_trunk.size() + 1 shares the whole network (empty headers).
  std::size_t homogeneity_level = 1;
  std::vector<std::size_t> fe_trunk = {32, 16};
  double participation = 1.0;
  bool strict = false;  // reject T_s > 0 with an untrained generator
  std::size_t threads = 1;
  std::uint64_t seed = 0;

  // Throws ConfigError on any constraint violation.
  void validate() const;
  std::vector<ArchSpec> resolved_archs() const;
  GenHyper gen_hyper() const;
  bool operator==(const FederationConfig&) const = default;
};

struct ClientState {
  std::size_t id = 0;
  std::size_t arch_index = 0;
  LabeledDataset shard;
};

// IID equal shards of a pool; client k gets architecture k mod M.
std::vector<ClientState> make_clients(const LabeledDataset& pool, const FederationConfig& cfg, double fraction);

struct ServerState {
  std::optional<GenModelParams> gen;
  std::map<std::size_t, Network> targets;  // GeFL and baselines
  Network fe;                              // GeFL-F
  std::map<std::size_t, Network> headers;  // GeFL-F
};

// Per-client float counts, split by phase, accumulated over rounds.
struct CommCounts {
  double fe_up = 0, fe_down = 0;
  double ka_up = 0, ka_down = 0;
  double tn_up = 0, tn_down = 0;
  double up() const { return fe_up + ka_up + tn_up; }
  double down() const { return fe_down + ka_down + tn_down; }
  CommCounts& operator+=(const CommCounts& o);
  bool operator==(const CommCounts&) const = default;
};

// One row of the round trace. arch is an architecture index, "mean" or
// "gen"; accuracy is absent on generative rows. comm columns are cumulative
// totals over all clients.
struct TraceRow {
  std::size_t round = 0;
  std::string stage;  // fe | ka | tn
  std::string arch;
  std::optional<double> accuracy;
  double loss = 0.0;
  double comm_up = 0.0;
  double comm_down = 0.0;
  bool operator==(const TraceRow&) const = default;
};

struct RunResult {
  ServerState server;
  std::vector<TraceRow> trace;
  std::map<std::size_t, double> arch_accuracy;  // final, per architecture in use
  double mean_accuracy = 0.0;
  std::vector<CommCounts> comm;  // per client
  std::size_t ka_rounds = 0;     // generative rounds actually run
};

// --- aggregation ------------------------------------------------------------

// Coordinate-wise mean, summed in the given (ascending client) order.
std::vector<double> aggregate(std::span<const std::vector<double>> param_sets);

// Per-architecture mean; arch_of[i] is the architecture of param_sets[i].
// Sets of one architecture are summed in their order of appearance.
std::map<std::size_t, std::vector<double>> aggregate_by_arch(std::span<const std::vector<double>> param_sets,
                                                             std::span<const std::size_t> arch_of);

// --- streams ----------------------------------------------------------------

enum class Stage : std::uint64_t { target_init = 1, gen_init, fe, ka, tn, participation, eval };

// Seed of the RNG stream a client uses in one round of one stage.
std::uint64_t client_stream_seed(std::uint64_t seed, Stage stage, std::size_t round, std::size_t client);

// Shuffled minibatch index lists covering 0..n-1 once: ceil(n / batch) batches.
std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch, Rng& rng);

// Clients taking part in a round (ascending ids).
std::vector<std::size_t> participants(const FederationConfig& cfg, Stage stage, std::size_t round);

// --- stages -----------------------------------------------------------------

struct KaOutcome {
  std::vector<TraceRow> rows;
  std::size_t rounds = 0;
};

// Rounds [first_round, first_round + rounds) of generative knowledge
// aggregation on server.gen, adding each participant's traffic to comm.
// Rows carry the per-round mean local loss. GeFL-F passes clients whose
// shards already hold F(x).
KaOutcome generative_knowledge_aggregation(ServerState& server, std::span<const ClientState> clients,
                                           const FederationConfig& cfg, std::size_t first_round,
                                           std::size_t rounds, std::vector<CommCounts>& comm);

// Generative rounds a run performs: T_KA when frozen; floor(T_KA / 2) before
// target training plus one per target round in update mode.
std::size_t ka_round_count(const FederationConfig& cfg);

// One local generative training round on a copy of w_g, as run by a client.
GenModelParams local_generative_round(const GenModelParams& global, const LabeledDataset& shard,
                                      const FederationConfig& cfg, std::uint64_t stream_seed, double* mean_loss);

// One local classifier round: T_s synthetic epochs, then T_r real epochs,
// plain SGD(alpha) on cross-entropy. `gen` may be null when T_s == 0.
Network local_classifier_round(const Network& start, const LabeledDataset& shard, const GenModelParams* gen,
                               const FederationConfig& cfg, std::uint64_t stream_seed, double* mean_loss);

// Full GeFL run: stage (i) then stage (ii). test may be null (no accuracy rows).
RunResult run_gefl(std::span<const ClientState> clients, const FederationConfig& cfg, const LabeledDataset* test);

// GeFL-F: warm-up, feature-generative aggregation, header training.
RunResult run_geflf(std::span<const ClientState> clients, const FederationConfig& cfg, const LabeledDataset* test);

// grouped_fedavg, local_only or lg_partial over T_TN rounds.
RunResult run_baseline(Method kind, std::span<const ClientState> clients, const FederationConfig& cfg,
                       const LabeledDataset* test);

RunResult run_method(Method method, std::span<const ClientState> clients, const FederationConfig& cfg,
                     const LabeledDataset* test);

// Initial target networks for the given architecture indices (deterministic in cfg.seed).
std::map<std::size_t, Network> initial_targets(const FederationConfig& cfg, std::span<const std::size_t> archs,
                                               std::size_t in_dim, std::size_t classes);

// Sorted distinct architecture indices of the clients.
std::vector<std::size_t> archs_in_use(std::span<const ClientState> clients);

// GeFL-F split of architecture m at the configured homogeneity level.
struct FeatureSplit {
  Network fe;
  Network header;
};
FeatureSplit split_for_homogeneity(const FederationConfig& cfg, std::size_t arch_index, std::size_t in_dim,
                                   std::size_t classes);

}  // namespace gefl
