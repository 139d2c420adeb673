#include "gefl/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "gefl/errors.hpp"

namespace gefl {

double classifier_accuracy(const Network& net, const LabeledDataset& test) {
  if (test.size() == 0) throw DomainError("accuracy on an empty test set");
  const auto pred = argmax_rows(net.forward(test.inputs));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == test.labels[i];
  return static_cast<double>(correct) / static_cast<double>(test.size());
}

AccuracyReport mean_accuracy(const std::map<std::size_t, Network>& targets, const LabeledDataset& test,
                             const Network* fe) {
  if (test.size() == 0) throw DomainError("accuracy on an empty test set");
  if (targets.empty()) throw DomainError("no target networks to evaluate");
  LabeledDataset features = test;
  if (fe) features.inputs = fe->forward(test.inputs);
  AccuracyReport report;
  double sum = 0.0;
  for (const auto& [m, net] : targets) {
    const double acc = classifier_accuracy(net, features);
    report.per_arch[m] = acc;
    sum += acc;
  }
  report.mean = sum / static_cast<double>(targets.size());
  return report;
}

std::string to_string(DistanceKind k) { return k == DistanceKind::l2 ? "l2" : "probe_feature"; }

namespace {

double min_squared_distance(std::span<const double> x, const Tensor& set) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < set.rows(); ++r) {
    const auto row = set.row(r);
    double d = 0.0;
    for (std::size_t j = 0; j < row.size(); ++j) d += (x[j] - row[j]) * (x[j] - row[j]);
    best = std::min(best, d);
  }
  return best;
}

}  // namespace

MndReport mnd_ratio(const Tensor& probes, const Tensor& synthetic, const Tensor& validation,
                    const Network* embedding) {
  if (probes.rows() == 0 || synthetic.rows() == 0 || validation.rows() == 0)
    throw DomainError("MND needs non-empty probe, synthetic and validation sets");
  if (synthetic.rows() != validation.rows())
    throw DomainError("MND needs |S| == |V| (got " + std::to_string(synthetic.rows()) + " and " +
                      std::to_string(validation.rows()) + ")");
  if (probes.cols() != synthetic.cols() || probes.cols() != validation.cols())
    throw ShapeError("MND sets differ in dimension");
  const Tensor p = embedding ? embedding->forward(probes) : probes;
  const Tensor s = embedding ? embedding->forward(synthetic) : synthetic;
  const Tensor v = embedding ? embedding->forward(validation) : validation;

  MndReport report;
  report.distance = embedding ? DistanceKind::probe_feature : DistanceKind::l2;
  report.synthetic_size = s.rows();
  report.validation_size = v.rows();
  report.probe_size = p.rows();
  double sum = 0.0;
  for (std::size_t i = 0; i < p.rows(); ++i) {
    const double ds = std::sqrt(min_squared_distance(p.row(i), s));
    if (ds == 0.0) {
      ++report.duplicate_hits;
      continue;
    }
    const double dv = std::sqrt(min_squared_distance(p.row(i), v));
    const double ratio = dv / ds;
    if (!std::isfinite(ratio)) throw NumericError("non-finite MND ratio");
    report.ratios.push_back(ratio);
    sum += ratio;
  }
  if (report.ratios.empty()) throw DomainError("every probe has an exact copy in the synthetic set");
  report.mean_ratio = sum / static_cast<double>(report.ratios.size());
  return report;
}

namespace {

std::size_t square_side(std::size_t dim) {
  const auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(dim))));
  return side * side == dim ? side : 0;
}

// Squared-difference TV and its gradient over a side x side grid.
double tv_and_grad(std::span<const double> x, std::size_t side, std::span<double> grad) {
  double tv = 0.0;
  for (std::size_t r = 0; r < side; ++r) {
    for (std::size_t c = 0; c < side; ++c) {
      const std::size_t i = r * side + c;
      if (c + 1 < side) {
        const double d = x[i + 1] - x[i];
        tv += d * d;
        grad[i + 1] += 2 * d;
        grad[i] -= 2 * d;
      }
      if (r + 1 < side) {
        const double d = x[i + side] - x[i];
        tv += d * d;
        grad[i + side] += 2 * d;
        grad[i] -= 2 * d;
      }
    }
  }
  return tv;
}

struct Evaluation {
  double residual = 0.0;
  double objective = 0.0;
  std::vector<double> grad;
};

Evaluation evaluate_inversion(const Network& fe, const Tensor& x, std::span<const double> target, double tv_weight,
                              std::size_t side) {
  const auto trace = fe.forward_trace(x);
  Tensor diff = trace.output;
  Evaluation e;
  for (std::size_t j = 0; j < diff.size(); ++j) {
    diff.data()[j] -= target[j];
    e.residual += diff.data()[j] * diff.data()[j];
  }
  for (double& v : diff.data()) v *= 2.0;
  const auto back = fe.backward(trace, diff);
  e.grad.assign(back.input_grad.data().begin(), back.input_grad.data().end());
  e.objective = e.residual;
  if (tv_weight > 0.0) {
    std::vector<double> tv_grad(e.grad.size(), 0.0);
    e.objective += tv_weight * tv_and_grad(x.data(), side, tv_grad);
    for (std::size_t j = 0; j < e.grad.size(); ++j) e.grad[j] += tv_weight * tv_grad[j];
  }
  return e;
}

}  // namespace

InversionResult invert_feature(const Network& fe, std::span<const double> target_feature, const InversionConfig& cfg) {
  if (fe.empty()) throw ConfigError("inversion needs a non-empty feature extractor");
  const std::size_t dim = fe.input_dim();
  if (target_feature.size() != fe.output_dim())
    throw ShapeError("target feature has " + std::to_string(target_feature.size()) + " values, extractor outputs " +
                     std::to_string(fe.output_dim()));
  if (!(cfg.lr > 0.0) || !(cfg.tv_weight >= 0.0)) throw ConfigError("inversion needs lr > 0 and tv_weight >= 0");
  const std::size_t side = square_side(dim);
  if (cfg.tv_weight > 0.0 && side == 0)
    throw ConfigError("tv_weight > 0 needs an image input (square dimension), got " + std::to_string(dim));

  InversionResult out;
  out.x = Tensor::matrix(1, dim, std::vector<double>(dim, 0.5));
  auto current = evaluate_inversion(fe, out.x, target_feature, cfg.tv_weight, side);
  out.residual_trace.push_back(current.residual);
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    double lr = cfg.lr;
    for (int halving = 0; halving <= 30; ++halving, lr *= 0.5) {
      Tensor candidate = out.x;
      for (std::size_t j = 0; j < dim; ++j)
        candidate.data()[j] = std::clamp(out.x.data()[j] - lr * current.grad[j], 0.0, 1.0);
      auto next = evaluate_inversion(fe, candidate, target_feature, cfg.tv_weight, side);
      if (next.objective <= current.objective && next.residual <= current.residual) {
        out.x = std::move(candidate);
        current = std::move(next);
        break;
      }
    }
    out.residual_trace.push_back(current.residual);
  }
  out.residual = current.residual;
  return out;
}

CommLedger comm_ledger(Method method, const FederationConfig& cfg, std::span<const std::size_t> client_arch,
                       const LedgerSizes& sizes) {
  std::map<std::size_t, std::size_t> group;
  for (std::size_t m : client_arch) ++group[m];
  const double ka_rounds = static_cast<double>(ka_round_count(cfg));
  const double t_tn = static_cast<double>(cfg.t_tn);
  const double t_fe = static_cast<double>(cfg.t_fe);
  CommLedger ledger;
  for (std::size_t m : client_arch) {
    CommCounts c;
    const bool shared = group[m] >= 2;
    const auto target_it = sizes.target.find(m);
    const double target = target_it == sizes.target.end() ? 0.0 : static_cast<double>(target_it->second);
    switch (method) {
      case Method::geflf:
        c.fe_up = c.fe_down = t_fe * static_cast<double>(sizes.fe);
        [[fallthrough]];
      case Method::gefl:
        c.ka_up = c.ka_down = ka_rounds * static_cast<double>(sizes.gen);
        if (shared) c.tn_up = c.tn_down = t_tn * target;
        break;
      case Method::grouped_fedavg:
        if (shared) c.tn_up = c.tn_down = t_tn * target;
        break;
      case Method::local_only:
        break;
      case Method::lg_partial: {
        const double first = static_cast<double>(sizes.lg_shared);
        c.fe_up = c.fe_down = t_tn * first;
        if (shared) c.tn_up = c.tn_down = t_tn * (target - first);
        break;
      }
    }
    ledger.per_client.push_back(c);
    ledger.total += c;
  }
  return ledger;
}

LedgerSizes ledger_sizes(Method method, const FederationConfig& cfg, std::span<const std::size_t> client_arch,
                         std::size_t in_dim, std::size_t classes) {
  LedgerSizes sizes;
  const auto zoo = cfg.resolved_archs();
  std::size_t gen_dim = in_dim;
  for (std::size_t m : client_arch) {
    if (sizes.target.count(m)) continue;
    if (method == Method::geflf) {
      const auto split = split_for_homogeneity(cfg, m, in_dim, classes);
      sizes.target[m] = split.header.param_count();
      sizes.fe = split.fe.param_count();
      gen_dim = split.fe.empty() ? in_dim : split.fe.output_dim();
    } else {
      const Network net = build_classifier(zoo.at(m), in_dim, classes);
      sizes.target[m] = net.param_count();
      const auto [lo, hi] = net.dense_param_range(0);
      sizes.lg_shared = hi - lo;
    }
  }
  if (method == Method::gefl || method == Method::geflf) {
    GenModelSpec spec = cfg.gen;
    spec.classes = classes;
    spec.sample_dim = gen_dim;
    Rng rng(0);
    sizes.gen = gen_param_count(make_gen_model(spec, rng));
  }
  return sizes;
}

std::string to_string(EvalMode m) { return m == EvalMode::syn_only ? "syn_only" : "real_plus_syn"; }

EvalMode eval_mode_from_string(const std::string& name) {
  if (name == "syn_only") return EvalMode::syn_only;
  if (name == "real_plus_syn") return EvalMode::real_plus_syn;
  throw ConfigError("unknown eval_mode '" + name + "'");
}

double eval_mode(std::span<const ClientState> clients, FederationConfig cfg, const LabeledDataset& test,
                 EvalMode mode) {
  if (mode == EvalMode::syn_only) cfg.t_r = 0;
  return run_gefl(clients, cfg, &test).mean_accuracy;
}

}  // namespace gefl
