#include "gefl/nn.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "gefl/errors.hpp"

namespace gefl {

namespace {

double activate(const ActivationSpec& a, double x) {
  switch (a.kind) {
    case Activation::relu:
      return x > 0.0 ? x : 0.0;
    case Activation::leaky_relu:
      return x > 0.0 ? x : a.slope * x;
    case Activation::tanh:
      return std::tanh(x);
    case Activation::sigmoid:
      return 1.0 / (1.0 + std::exp(-x));
  }
  return x;
}

// Derivative expressed through the layer input x and output y.
double activate_grad(const ActivationSpec& a, double x, double y) {
  switch (a.kind) {
    case Activation::relu:
      return x > 0.0 ? 1.0 : 0.0;
    case Activation::leaky_relu:
      return x > 0.0 ? 1.0 : a.slope;
    case Activation::tanh:
      return 1.0 - y * y;
    case Activation::sigmoid:
      return y * (1.0 - y);
  }
  return 1.0;
}

// y = x W + b with W stored [in x out] row-major, b right after W.
Tensor dense_apply(const DenseSpec& d, const double* w, const Tensor& x) {
  const double* b = w + d.in * d.out;
  Tensor y = Tensor::matrix(x.rows(), d.out);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto xr = x.row(r);
    auto yr = y.row(r);
    for (std::size_t o = 0; o < d.out; ++o) yr[o] = b[o];
    for (std::size_t i = 0; i < d.in; ++i) {
      const double xi = xr[i];
      const double* wi = w + i * d.out;
      for (std::size_t o = 0; o < d.out; ++o) yr[o] += xi * wi[o];
    }
  }
  return y;
}

}  // namespace

std::string to_string(Activation a) {
  switch (a) {
    case Activation::relu:
      return "relu";
    case Activation::leaky_relu:
      return "leaky_relu";
    case Activation::tanh:
      return "tanh";
    case Activation::sigmoid:
      return "sigmoid";
  }
  return "?";
}

Activation activation_from_string(const std::string& name) {
  if (name == "relu") return Activation::relu;
  if (name == "leaky_relu") return Activation::leaky_relu;
  if (name == "tanh") return Activation::tanh;
  if (name == "sigmoid") return Activation::sigmoid;
  throw ConfigError("unknown activation '" + name + "'");
}

Network::Network(std::vector<LayerSpec> layers) : layers_(std::move(layers)) {
  std::size_t total = 0;
  std::size_t prev_out = 0;
  for (const auto& layer : layers_) {
    if (const auto* d = std::get_if<DenseSpec>(&layer)) {
      if (d->in == 0 || d->out == 0) throw ShapeError("dense layer dimensions must be positive");
      if (prev_out != 0 && prev_out != d->in)
        throw ShapeError("dense layer expects " + std::to_string(d->in) + " inputs but previous layer yields " +
                         std::to_string(prev_out));
      dense_offsets_.push_back(total);
      total += d->in * d->out + d->out;
      prev_out = d->out;
    }
  }
  params_.assign(total, 0.0);
}

Network Network::mlp(std::size_t in, std::span<const std::size_t> hidden, std::size_t out, ActivationSpec act,
                     std::optional<ActivationSpec> output_act) {
  std::vector<LayerSpec> layers;
  std::size_t prev = in;
  for (auto h : hidden) {
    layers.emplace_back(DenseSpec{prev, h});
    layers.emplace_back(act);
    prev = h;
  }
  layers.emplace_back(DenseSpec{prev, out});
  if (output_act) layers.emplace_back(*output_act);
  return Network(std::move(layers));
}

void Network::init_glorot(Rng& rng) {
  std::size_t dense_index = 0;
  for (const auto& layer : layers_) {
    const auto* d = std::get_if<DenseSpec>(&layer);
    if (!d) continue;
    const double limit = std::sqrt(6.0 / static_cast<double>(d->in + d->out));
    const std::size_t offset = dense_offsets_[dense_index++];
    for (std::size_t i = 0; i < d->in * d->out; ++i) params_[offset + i] = rng.uniform(-limit, limit);
    for (std::size_t i = 0; i < d->out; ++i) params_[offset + d->in * d->out + i] = 0.0;
  }
}

std::size_t Network::input_dim() const {
  for (const auto& layer : layers_)
    if (const auto* d = std::get_if<DenseSpec>(&layer)) return d->in;
  return 0;
}

std::size_t Network::output_dim() const {
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it)
    if (const auto* d = std::get_if<DenseSpec>(&*it)) return d->out;
  return 0;
}

std::pair<std::size_t, std::size_t> Network::dense_param_range(std::size_t dense_index) const {
  if (dense_index >= dense_offsets_.size()) throw ShapeError("dense layer index out of range");
  const std::size_t begin = dense_offsets_[dense_index];
  const std::size_t end = dense_index + 1 < dense_offsets_.size() ? dense_offsets_[dense_index + 1] : params_.size();
  return {begin, end};
}

void Network::unflatten_params(std::span<const double> flat) {
  if (flat.size() != params_.size())
    throw ShapeError("parameter vector has length " + std::to_string(flat.size()) + ", network expects " +
                     std::to_string(params_.size()));
  std::copy(flat.begin(), flat.end(), params_.begin());
}

void Network::check_input(const Tensor& batch) const {
  if (batch.rank() != 2) throw ShapeError("network input must be a rank-2 batch");
  const auto in = input_dim();
  if (in != 0 && batch.cols() != in)
    throw ShapeError("network expects input dimension " + std::to_string(in) + ", got " +
                     std::to_string(batch.cols()));
}

Tensor Network::forward(const Tensor& batch) const {
  check_input(batch);
  Tensor x = batch;
  std::size_t dense_index = 0;
  for (const auto& layer : layers_) {
    if (const auto* d = std::get_if<DenseSpec>(&layer)) {
      x = dense_apply(*d, params_.data() + dense_offsets_[dense_index++], x);
    } else {
      const auto& a = std::get<ActivationSpec>(layer);
      for (double& v : x.data()) v = activate(a, v);
    }
  }
  x.require_finite("network output");
  return x;
}

ForwardTrace Network::forward_trace(const Tensor& batch) const {
  check_input(batch);
  ForwardTrace trace;
  trace.layer_inputs.reserve(layers_.size());
  Tensor x = batch;
  std::size_t dense_index = 0;
  for (const auto& layer : layers_) {
    trace.layer_inputs.push_back(x);
    if (const auto* d = std::get_if<DenseSpec>(&layer)) {
      x = dense_apply(*d, params_.data() + dense_offsets_[dense_index++], x);
    } else {
      const auto& a = std::get<ActivationSpec>(layer);
      for (double& v : x.data()) v = activate(a, v);
    }
  }
  x.require_finite("network output");
  trace.output = std::move(x);
  return trace;
}

BackwardResult Network::backward(const ForwardTrace& trace, const Tensor& output_grad) const {
  if (trace.layer_inputs.size() != layers_.size()) throw ShapeError("trace does not belong to this network");
  if (output_grad.shape() != trace.output.shape()) throw ShapeError("output gradient shape mismatch");
  BackwardResult result;
  result.param_grad.assign(params_.size(), 0.0);
  Tensor g = output_grad;
  std::size_t dense_index = dense_offsets_.size();
  for (std::size_t li = layers_.size(); li-- > 0;) {
    const Tensor& x = trace.layer_inputs[li];
    const auto& layer = layers_[li];
    if (const auto* d = std::get_if<DenseSpec>(&layer)) {
      const std::size_t offset = dense_offsets_[--dense_index];
      const double* w = params_.data() + offset;
      double* gw = result.param_grad.data() + offset;
      double* gb = gw + d->in * d->out;
      Tensor gx = Tensor::matrix(x.rows(), d->in);
      for (std::size_t r = 0; r < x.rows(); ++r) {
        auto xr = x.row(r);
        auto gr = g.row(r);
        auto gxr = gx.row(r);
        for (std::size_t o = 0; o < d->out; ++o) gb[o] += gr[o];
        for (std::size_t i = 0; i < d->in; ++i) {
          const double xi = xr[i];
          const double* wi = w + i * d->out;
          double* gwi = gw + i * d->out;
          double acc = 0.0;
          for (std::size_t o = 0; o < d->out; ++o) {
            gwi[o] += xi * gr[o];
            acc += wi[o] * gr[o];
          }
          gxr[i] = acc;
        }
      }
      g = std::move(gx);
    } else {
      const auto& a = std::get<ActivationSpec>(layer);
      const Tensor& y = li + 1 < layers_.size() ? trace.layer_inputs[li + 1] : trace.output;
      auto gd = g.data();
      auto xd = x.data();
      auto yd = y.data();
      for (std::size_t i = 0; i < gd.size(); ++i) gd[i] *= activate_grad(a, xd[i], yd[i]);
    }
  }
  result.input_grad = std::move(g);
  return result;
}

Network Network::slice(std::size_t first_layer, std::size_t last_layer) const {
  if (first_layer > last_layer || last_layer > layers_.size()) throw ShapeError("layer slice out of range");
  std::size_t dense_before = 0;
  for (std::size_t i = 0; i < first_layer; ++i)
    if (std::holds_alternative<DenseSpec>(layers_[i])) ++dense_before;
  Network out(std::vector<LayerSpec>(layers_.begin() + static_cast<std::ptrdiff_t>(first_layer),
                                     layers_.begin() + static_cast<std::ptrdiff_t>(last_layer)));
  if (out.param_count() > 0) {
    const std::size_t begin = dense_offsets_[dense_before];
    std::copy_n(params_.begin() + static_cast<std::ptrdiff_t>(begin), out.param_count(), out.params_.begin());
  }
  return out;
}

Network concat(const Network& a, const Network& b) {
  std::vector<LayerSpec> layers = a.layers();
  layers.insert(layers.end(), b.layers().begin(), b.layers().end());
  Network out(std::move(layers));
  auto dst = out.params();
  std::copy(a.params().begin(), a.params().end(), dst.begin());
  std::copy(b.params().begin(), b.params().end(), dst.begin() + static_cast<std::ptrdiff_t>(a.param_count()));
  return out;
}

LossResult softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
  if (labels.empty() || logits.rows() == 0) throw DomainError("cross-entropy on an empty batch");
  if (labels.size() != logits.rows()) throw ShapeError("label count differs from batch size");
  const std::size_t classes = logits.cols();
  const double inv_batch = 1.0 / static_cast<double>(labels.size());
  LossResult out;
  out.grad = Tensor::matrix(logits.rows(), classes);
  double total = 0.0;
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const int y = labels[r];
    if (y < 0 || static_cast<std::size_t>(y) >= classes)
      throw DomainError("label " + std::to_string(y) + " outside [0, " + std::to_string(classes) + ")");
    auto z = logits.row(r);
    const double zmax = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (double v : z) sum += std::exp(v - zmax);
    const double log_norm = zmax + std::log(sum);
    total += log_norm - z[static_cast<std::size_t>(y)];
    auto gr = out.grad.row(r);
    for (std::size_t c = 0; c < classes; ++c) gr[c] = std::exp(z[c] - log_norm) * inv_batch;
    gr[static_cast<std::size_t>(y)] -= inv_batch;
  }
  out.value = total * inv_batch;
  if (!std::isfinite(out.value)) throw NumericError("non-finite cross-entropy");
  return out;
}

LossResult bce_with_logits(const Tensor& logits, std::span<const double> targets) {
  if (targets.empty() || logits.rows() == 0) throw DomainError("BCE on an empty batch");
  if (logits.cols() != 1) throw ShapeError("BCE expects a single logit per row");
  if (targets.size() != logits.rows()) throw ShapeError("target count differs from batch size");
  const double inv_batch = 1.0 / static_cast<double>(targets.size());
  LossResult out;
  out.grad = Tensor::matrix(logits.rows(), 1);
  double total = 0.0;
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const double z = logits(r, 0);
    const double t = targets[r];
    if (t < 0.0 || t > 1.0) throw DomainError("BCE target outside [0, 1]");
    // max(z,0) - z t + log(1 + exp(-|z|))
    total += std::max(z, 0.0) - z * t + std::log1p(std::exp(-std::abs(z)));
    const double p = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
    out.grad(r, 0) = (p - t) * inv_batch;
  }
  out.value = total * inv_batch;
  if (!std::isfinite(out.value)) throw NumericError("non-finite BCE");
  return out;
}

LossResult squared_error(const Tensor& pred, const Tensor& target) {
  if (pred.rows() == 0) throw DomainError("squared error on an empty batch");
  if (pred.shape() != target.shape()) throw ShapeError("prediction and target shapes differ");
  const double inv_batch = 1.0 / static_cast<double>(pred.rows());
  LossResult out;
  out.grad = Tensor(pred.shape());
  double total = 0.0;
  auto p = pred.data();
  auto t = target.data();
  auto g = out.grad.data();
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double diff = p[i] - t[i];
    total += diff * diff;
    g[i] = 2.0 * diff * inv_batch;
  }
  out.value = total * inv_batch;
  if (!std::isfinite(out.value)) throw NumericError("non-finite squared error");
  return out;
}

LossAndGrad loss_and_grad(const Network& net, const Tensor& batch, std::span<const int> labels, LossKind kind) {
  if (batch.rows() == 0 || labels.empty()) throw DomainError("loss_and_grad on an empty batch");
  auto trace = net.forward_trace(batch);
  LossResult loss;
  switch (kind) {
    case LossKind::cross_entropy:
      loss = softmax_cross_entropy(trace.output, labels);
      break;
    case LossKind::bce: {
      std::vector<double> targets(labels.size());
      for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] != 0 && labels[i] != 1) throw DomainError("BCE labels must be 0 or 1");
        targets[i] = labels[i];
      }
      loss = bce_with_logits(trace.output, targets);
      break;
    }
    case LossKind::mse:
      throw UsageError("mse needs a target tensor, not class labels");
  }
  auto back = net.backward(trace, loss.grad);
  return {loss.value, std::move(back.param_grad)};
}

LossAndGrad loss_and_grad(const Network& net, const Tensor& batch, const Tensor& target) {
  auto trace = net.forward_trace(batch);
  auto loss = squared_error(trace.output, target);
  auto back = net.backward(trace, loss.grad);
  return {loss.value, std::move(back.param_grad)};
}

Optimizer Optimizer::sgd(double lr) {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("learning rate must be finite and non-negative");
  return Optimizer(SgdConfig{lr});
}

Optimizer Optimizer::adam(AdamConfig config, std::size_t param_count) {
  if (!(config.lr >= 0.0) || !std::isfinite(config.lr)) throw ConfigError("learning rate must be finite and non-negative");
  if (!(config.beta1 >= 0.0 && config.beta1 < 1.0 && config.beta2 >= 0.0 && config.beta2 < 1.0))
    throw ConfigError("Adam betas must lie in [0, 1)");
  if (!(config.eps > 0.0)) throw ConfigError("Adam eps must be positive");
  Optimizer opt(config);
  opt.m_.assign(param_count, 0.0);
  opt.v_.assign(param_count, 0.0);
  return opt;
}

void Optimizer::step(std::span<double> params, std::span<const double> grads) {
  if (params.size() != grads.size())
    throw ShapeError("optimizer step: " + std::to_string(params.size()) + " params vs " +
                     std::to_string(grads.size()) + " grads");
  ++step_count_;
  if (const auto* sgd = std::get_if<SgdConfig>(&config_)) {
    for (std::size_t i = 0; i < params.size(); ++i) params[i] -= sgd->lr * grads[i];
    return;
  }
  const auto& adam = std::get<AdamConfig>(config_);
  if (m_.size() != params.size()) throw ShapeError("Adam moments do not match the parameter vector");
  const double t = static_cast<double>(step_count_);
  const double c1 = 1.0 - std::pow(adam.beta1, t);
  const double c2 = 1.0 - std::pow(adam.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = adam.beta1 * m_[i] + (1.0 - adam.beta1) * grads[i];
    v_[i] = adam.beta2 * v_[i] + (1.0 - adam.beta2) * grads[i] * grads[i];
    const double m_hat = m_[i] / c1;
    const double v_hat = v_[i] / c2;
    params[i] -= adam.lr * m_hat / (std::sqrt(v_hat) + adam.eps);
  }
}

void Optimizer::reset() {
  std::fill(m_.begin(), m_.end(), 0.0);
  std::fill(v_.begin(), v_.end(), 0.0);
  step_count_ = 0;
}

std::vector<int> argmax_rows(const Tensor& logits) {
  std::vector<int> out(logits.rows());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    auto z = logits.row(r);
    out[r] = static_cast<int>(std::max_element(z.begin(), z.end()) - z.begin());
  }
  return out;
}

}  // namespace gefl
