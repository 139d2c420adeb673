#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "gefl/rng.hpp"
#include "gefl/tensor.hpp"

namespace gefl {

enum class Activation { relu, leaky_relu, tanh, sigmoid };

struct DenseSpec {
  std::size_t in = 0;
  std::size_t out = 0;
  bool operator==(const DenseSpec&) const = default;
};

struct ActivationSpec {
  Activation kind = Activation::relu;
  double slope = 0.2;  // leaky_relu only
  bool operator==(const ActivationSpec&) const = default;
};

using LayerSpec = std::variant<DenseSpec, ActivationSpec>;

std::string to_string(Activation a);
Activation activation_from_string(const std::string& name);

// Input of every layer, recorded by forward_trace for the backward pass.
struct ForwardTrace {
  std::vector<Tensor> layer_inputs;
  Tensor output;
};

struct BackwardResult {
  std::vector<double> param_grad;  // same layout as Network::params()
  Tensor input_grad;
};

// Feed-forward stack of dense and activation layers. Parameters of all
// dense layers live in one flat vector: per dense layer, the [in x out]
// weight matrix row-major, then the bias. A network with no layers is the
// identity map.
class Network {
 public:
  Network() = default;
  explicit Network(std::vector<LayerSpec> layers);

  // in -> hidden... -> out, `act` after every hidden dense layer and
  // `output_act` (if any) after the last one.
  static Network mlp(std::size_t in, std::span<const std::size_t> hidden, std::size_t out,
                     ActivationSpec act, std::optional<ActivationSpec> output_act = std::nullopt);

  // Glorot-uniform weights in +-sqrt(6 / (fan_in + fan_out)), zero biases.
  void init_glorot(Rng& rng);

  const std::vector<LayerSpec>& layers() const { return layers_; }
  bool empty() const { return layers_.empty(); }
  std::size_t input_dim() const;   // 0 for the identity network
  std::size_t output_dim() const;  // 0 for the identity network
  std::size_t param_count() const { return params_.size(); }
  std::size_t dense_count() const { return dense_offsets_.size(); }

  // [begin, end) of the parameters owned by the i-th dense layer.
  std::pair<std::size_t, std::size_t> dense_param_range(std::size_t dense_index) const;

  std::span<double> params() { return params_; }
  std::span<const double> params() const { return params_; }
  std::vector<double> flatten_params() const { return params_; }
  void unflatten_params(std::span<const double> flat);

  Tensor forward(const Tensor& batch) const;
  ForwardTrace forward_trace(const Tensor& batch) const;
  BackwardResult backward(const ForwardTrace& trace, const Tensor& output_grad) const;

  // Layers [first, last) as a standalone network, parameters copied.
  Network slice(std::size_t first_layer, std::size_t last_layer) const;

  bool operator==(const Network&) const = default;

 private:
  void check_input(const Tensor& batch) const;

  std::vector<LayerSpec> layers_;
  std::vector<std::size_t> dense_offsets_;  // one per dense layer
  std::vector<double> params_;
};

// a followed by b; parameters are a's then b's.
Network concat(const Network& a, const Network& b);

// Loss value plus its gradient with respect to the network output.
struct LossResult {
  double value = 0.0;
  Tensor grad;
};

// Mean over rows of -log softmax(logits)[label].
LossResult softmax_cross_entropy(const Tensor& logits, std::span<const int> labels);

// Mean over rows of BCE(sigmoid(logit), target) for a single-logit output.
LossResult bce_with_logits(const Tensor& logits, std::span<const double> targets);

// Mean over rows of the squared L2 norm of (pred - target).
LossResult squared_error(const Tensor& pred, const Tensor& target);

enum class LossKind { cross_entropy, bce, mse };

struct LossAndGrad {
  double loss = 0.0;
  std::vector<double> grad;
};

// Cross-entropy over class labels, or BCE with labels in {0, 1}.
LossAndGrad loss_and_grad(const Network& net, const Tensor& batch, std::span<const int> labels,
                          LossKind kind);

// Squared error against a target tensor.
LossAndGrad loss_and_grad(const Network& net, const Tensor& batch, const Tensor& target);

struct SgdConfig {
  double lr = 0.1;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Optimizer {
 public:
  static Optimizer sgd(double lr);
  static Optimizer adam(AdamConfig config, std::size_t param_count);

  void step(std::span<double> params, std::span<const double> grads);

  // Drops moments and the step counter (fresh state, same hyper-parameters).
  void reset();

  long step_count() const { return step_count_; }
  bool is_adam() const { return std::holds_alternative<AdamConfig>(config_); }
  std::span<const double> first_moment() const { return m_; }
  std::span<const double> second_moment() const { return v_; }

 private:
  explicit Optimizer(std::variant<SgdConfig, AdamConfig> config) : config_(config) {}

  std::variant<SgdConfig, AdamConfig> config_;
  std::vector<double> m_;
  std::vector<double> v_;
  long step_count_ = 0;
};

// Row-wise argmax of a logits tensor.
std::vector<int> argmax_rows(const Tensor& logits);

}  // namespace gefl
