#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "gefl/datasets.hpp"
#include "gefl/federation.hpp"
#include "gefl/nn.hpp"

namespace gefl {

// Top-1 accuracy of a classifier on a labeled set.
double classifier_accuracy(const Network& net, const LabeledDataset& test);

struct AccuracyReport {
  std::map<std::size_t, double> per_arch;
  double mean = 0.0;  // unweighted over architectures
};

// Accuracy of each target; when fe is given every target is a header on top of it.
AccuracyReport mean_accuracy(const std::map<std::size_t, Network>& targets, const LabeledDataset& test,
                             const Network* fe = nullptr);

enum class DistanceKind { l2, probe_feature };

std::string to_string(DistanceKind k);

struct MndReport {
  std::vector<double> ratios;  // included probes only, in probe order
  double mean_ratio = 0.0;
  DistanceKind distance = DistanceKind::l2;
  std::size_t synthetic_size = 0;
  std::size_t validation_size = 0;
  std::size_t probe_size = 0;
  // Probes with an exact copy in S; excluded from ratios and the mean.
  std::size_t duplicate_hits = 0;
};

// rho_i = min_{v in V} d(x_i, v) / min_{s in S} d(x_i, s), d Euclidean.
// With an embedding network, distances are taken between embeddings.
MndReport mnd_ratio(const Tensor& probes, const Tensor& synthetic, const Tensor& validation,
                    const Network* embedding = nullptr);

struct InversionConfig {
  std::size_t steps = 500;
  double lr = 0.05;
  double tv_weight = 1e-3;
};

struct InversionResult {
  Tensor x;                           // [1 x d], in [0, 1]
  double residual = 0.0;              // ||F(x) - f||^2 at the returned x
  std::vector<double> residual_trace;  // one entry per step, plus the start
};

// Projected gradient descent on ||F(x) - f||^2 + tv_weight * TV(x) from the
// constant 0.5 image. TV is the sum of squared differences of horizontally
// and vertically adjacent pixels on the square grid, so tv_weight > 0 needs a
// square input dimension. A step is halved until neither the objective nor
// the residual increases; after 30 halvings the point is kept.
InversionResult invert_feature(const Network& fe, std::span<const double> target_feature,
                               const InversionConfig& cfg = {});

// Per-client and total float counts in closed form for a method, given the
// sizes of the exchanged pieces.
struct LedgerSizes {
  std::size_t gen = 0;                       // |w_g|
  std::size_t fe = 0;                        // |theta^f| (GeFL-F)
  std::map<std::size_t, std::size_t> target;  // |theta_{g,m}|; GeFL-F: header size
  std::size_t lg_shared = 0;                 // first dense layer (lg_partial)
};

struct CommLedger {
  std::vector<CommCounts> per_client;
  CommCounts total;
};

CommLedger comm_ledger(Method method, const FederationConfig& cfg, std::span<const std::size_t> client_arch,
                       const LedgerSizes& sizes);

// Sizes of the exchanged pieces for a configuration and data shape.
LedgerSizes ledger_sizes(Method method, const FederationConfig& cfg, std::span<const std::size_t> client_arch,
                         std::size_t in_dim, std::size_t classes);

enum class EvalMode { syn_only, real_plus_syn };

std::string to_string(EvalMode m);
EvalMode eval_mode_from_string(const std::string& name);

// GeFL with T_r forced to 0 (syn_only) or as configured; final mean accuracy.
double eval_mode(std::span<const ClientState> clients, FederationConfig cfg, const LabeledDataset& test,
                 EvalMode mode);

}  // namespace gefl
