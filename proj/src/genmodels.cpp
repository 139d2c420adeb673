#include "gefl/genmodels.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "gefl/errors.hpp"

namespace gefl {

namespace {

Tensor gaussian_tensor(std::size_t rows, std::size_t cols, Rng& rng) {
  Tensor t = Tensor::matrix(rows, cols);
  for (double& v : t.data()) v = rng.normal();
  return t;
}

void check_labels(std::span<const int> labels, std::size_t classes) {
  if (labels.empty()) throw DomainError("empty label vector");
  for (int y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= classes)
      throw DomainError("label " + std::to_string(y) + " outside [0, " + std::to_string(classes) + ")");
}

void check_batch(const Tensor& x, std::span<const int> y, std::size_t dim, std::size_t classes) {
  if (x.rows() == 0 || x.rows() != y.size()) throw DomainError("batch rows and labels disagree or are empty");
  if (x.cols() != dim) throw ShapeError("batch dimension " + std::to_string(x.cols()) + ", model expects " +
                                        std::to_string(dim));
  check_labels(y, classes);
}

void clamp_unit(Tensor& t) {
  for (double& v : t.data()) v = std::clamp(v, 0.0, 1.0);
}

// Concatenated flat parameters of two networks and the inverse.
std::vector<double> join(const Network& a, const Network& b) {
  std::vector<double> out(a.params().begin(), a.params().end());
  out.insert(out.end(), b.params().begin(), b.params().end());
  return out;
}

void split_into(std::span<const double> flat, Network& a, Network& b) {
  if (flat.size() != a.param_count() + b.param_count()) throw ShapeError("generative parameter vector length mismatch");
  a.unflatten_params(flat.first(a.param_count()));
  b.unflatten_params(flat.subspan(a.param_count()));
}

// Rows of [x_t | time_embedding(t_i) | onehot(label_i) or zeros].
Tensor denoiser_input(const Ddpm& p, const Tensor& x_t, std::span<const std::size_t> t, std::span<const int> labels) {
  const std::size_t rows = x_t.rows();
  if (t.size() != rows || labels.size() != rows) throw ShapeError("denoiser input: row counts differ");
  const std::size_t width = p.sample_dim + p.time_embed_dim + p.classes;
  Tensor in = Tensor::matrix(rows, width);
  for (std::size_t r = 0; r < rows; ++r) {
    auto dst = in.row(r);
    auto src = x_t.row(r);
    std::copy(src.begin(), src.end(), dst.begin());
    const auto emb = time_embedding(t[r], p.time_embed_dim);
    std::copy(emb.begin(), emb.end(), dst.begin() + static_cast<std::ptrdiff_t>(p.sample_dim));
    const int y = labels[r];
    if (y >= 0) {
      if (static_cast<std::size_t>(y) >= p.classes) throw DomainError("label outside class range");
      dst[p.sample_dim + p.time_embed_dim + static_cast<std::size_t>(y)] = 1.0;
    } else if (y != -1) {
      throw DomainError("label must be a class index or -1 (null)");
    }
  }
  return in;
}

Tensor to_model_space(const Ddpm& p, const Tensor& x) {
  if (p.range == OutputRange::unbounded) return x;
  Tensor out = x;
  for (double& v : out.data()) v = 2.0 * v - 1.0;
  return out;
}

}  // namespace

std::string to_string(GenFamily f) {
  switch (f) {
    case GenFamily::cvae:
      return "cvae";
    case GenFamily::cgan:
      return "cgan";
    case GenFamily::cddpm:
      return "cddpm";
  }
  return "?";
}

GenFamily gen_family_from_string(const std::string& name) {
  if (name == "cvae") return GenFamily::cvae;
  if (name == "cgan") return GenFamily::cgan;
  if (name == "cddpm" || name == "ddpm") return GenFamily::cddpm;
  throw ConfigError("unknown generative family '" + name + "'");
}

GenModelParams make_gen_model(const GenModelSpec& spec, Rng& init_rng) {
  if (spec.classes < 1 || spec.sample_dim < 1) throw ConfigError("generative model needs classes and sample_dim > 0");
  const ActivationSpec relu{Activation::relu};
  const ActivationSpec leaky{Activation::leaky_relu, 0.2};
  std::vector<std::size_t> reversed(spec.hidden.rbegin(), spec.hidden.rend());
  switch (spec.family) {
    case GenFamily::cvae: {
      if (spec.latent_dim < 1) throw ConfigError("CVAE latent size must be positive");
      Cvae m;
      m.latent_dim = spec.latent_dim;
      m.classes = spec.classes;
      m.sample_dim = spec.sample_dim;
      m.range = spec.range;
      m.encoder = Network::mlp(spec.sample_dim + spec.classes, spec.hidden, 2 * spec.latent_dim, relu);
      m.decoder = Network::mlp(spec.latent_dim + spec.classes, reversed, spec.sample_dim, relu);
      m.encoder.init_glorot(init_rng);
      m.decoder.init_glorot(init_rng);
      return m;
    }
    case GenFamily::cgan: {
      if (spec.latent_dim < 1) throw ConfigError("CGAN latent size must be positive");
      Cgan m;
      m.latent_dim = spec.latent_dim;
      m.classes = spec.classes;
      m.sample_dim = spec.sample_dim;
      m.range = spec.range;
      std::optional<ActivationSpec> out_act;
      if (spec.range == OutputRange::unit_interval) out_act = ActivationSpec{Activation::tanh};
      m.generator = Network::mlp(spec.latent_dim + spec.classes, reversed, spec.sample_dim, leaky, out_act);
      m.discriminator = Network::mlp(spec.sample_dim + spec.classes, spec.hidden, 1, leaky);
      m.generator.init_glorot(init_rng);
      m.discriminator.init_glorot(init_rng);
      return m;
    }
    case GenFamily::cddpm: {
      if (spec.timesteps < 1) throw ConfigError("DDPM needs at least one timestep");
      if (!(spec.uncond_drop_prob >= 0.0 && spec.uncond_drop_prob < 1.0))
        throw ConfigError("uncond_drop_prob must lie in [0, 1)");
      if (spec.time_embed_dim < 2 || spec.time_embed_dim % 2) throw ConfigError("time embedding dim must be even");
      Ddpm m;
      m.betas = linear_beta_schedule(spec.timesteps, spec.beta_start, spec.beta_end);
      m.uncond_drop_prob = spec.uncond_drop_prob;
      m.classes = spec.classes;
      m.sample_dim = spec.sample_dim;
      m.time_embed_dim = spec.time_embed_dim;
      m.range = spec.range;
      m.denoiser =
          Network::mlp(spec.sample_dim + spec.time_embed_dim + spec.classes, spec.hidden, spec.sample_dim, relu);
      m.denoiser.init_glorot(init_rng);
      return m;
    }
  }
  throw ConfigError("unknown generative family");
}

GenFamily family_of(const GenModelParams& p) {
  if (std::holds_alternative<Cvae>(p)) return GenFamily::cvae;
  if (std::holds_alternative<Cgan>(p)) return GenFamily::cgan;
  return GenFamily::cddpm;
}

std::size_t gen_classes(const GenModelParams& p) {
  return std::visit([](const auto& m) { return m.classes; }, p);
}

std::size_t gen_sample_dim(const GenModelParams& p) {
  return std::visit([](const auto& m) { return m.sample_dim; }, p);
}

std::size_t gen_param_count(const GenModelParams& p) {
  if (const auto* v = std::get_if<Cvae>(&p)) return v->encoder.param_count() + v->decoder.param_count();
  if (const auto* g = std::get_if<Cgan>(&p)) return g->generator.param_count() + g->discriminator.param_count();
  return std::get<Ddpm>(p).denoiser.param_count();
}

std::vector<double> flatten_gen(const GenModelParams& p) {
  if (const auto* v = std::get_if<Cvae>(&p)) return join(v->encoder, v->decoder);
  if (const auto* g = std::get_if<Cgan>(&p)) return join(g->generator, g->discriminator);
  return std::get<Ddpm>(p).denoiser.flatten_params();
}

void unflatten_gen(GenModelParams& p, std::span<const double> flat) {
  if (auto* v = std::get_if<Cvae>(&p)) return split_into(flat, v->encoder, v->decoder);
  if (auto* g = std::get_if<Cgan>(&p)) return split_into(flat, g->generator, g->discriminator);
  std::get<Ddpm>(p).denoiser.unflatten_params(flat);
}

// --- CVAE -------------------------------------------------------------------

double gaussian_kl(std::span<const double> mu, std::span<const double> logvar) {
  if (mu.size() != logvar.size()) throw ShapeError("gaussian_kl: mu and logvar lengths differ");
  double kl = 0.0;
  for (std::size_t i = 0; i < mu.size(); ++i) kl += mu[i] * mu[i] + std::exp(logvar[i]) - 1.0 - logvar[i];
  return 0.5 * kl;
}

GenLossGrad cvae_loss_and_grad(const Cvae& p, const Tensor& x, std::span<const int> y, const Tensor& eps) {
  check_batch(x, y, p.sample_dim, p.classes);
  const std::size_t batch = x.rows();
  const std::size_t l = p.latent_dim;
  if (eps.rows() != batch || eps.cols() != l) throw ShapeError("CVAE noise must be [B x latent]");
  const double inv_batch = 1.0 / static_cast<double>(batch);
  const Tensor labels = one_hot(y, p.classes);

  const auto enc = p.encoder.forward_trace(hconcat(x, labels));
  Tensor z = Tensor::matrix(batch, l);
  double kl = 0.0;
  for (std::size_t r = 0; r < batch; ++r) {
    auto stats = enc.output.row(r);
    kl += gaussian_kl(stats.first(l), stats.subspan(l, l));
    for (std::size_t j = 0; j < l; ++j) z(r, j) = stats[j] + std::exp(0.5 * stats[l + j]) * eps(r, j);
  }
  const auto dec = p.decoder.forward_trace(hconcat(z, labels));
  const auto recon = squared_error(dec.output, x);
  const auto dec_back = p.decoder.backward(dec, recon.grad);

  Tensor stats_grad = Tensor::matrix(batch, 2 * l);
  for (std::size_t r = 0; r < batch; ++r) {
    auto stats = enc.output.row(r);
    for (std::size_t j = 0; j < l; ++j) {
      const double dz = dec_back.input_grad(r, j);
      const double mu = stats[j];
      const double logvar = stats[l + j];
      const double sigma = std::exp(0.5 * logvar);
      stats_grad(r, j) = dz + mu * inv_batch;
      stats_grad(r, l + j) = dz * eps(r, j) * 0.5 * sigma + 0.5 * (std::exp(logvar) - 1.0) * inv_batch;
    }
  }
  const auto enc_back = p.encoder.backward(enc, stats_grad);

  GenLossGrad out;
  out.loss = recon.value + kl * inv_batch;
  if (!std::isfinite(out.loss)) throw NumericError("non-finite CVAE loss");
  out.grad = enc_back.param_grad;
  out.grad.insert(out.grad.end(), dec_back.param_grad.begin(), dec_back.param_grad.end());
  return out;
}

double cvae_train_step(Cvae& p, const Tensor& x, std::span<const int> y, Optimizer& opt, Rng& rng) {
  const Tensor eps = gaussian_tensor(x.rows(), p.latent_dim, rng);
  auto lg = cvae_loss_and_grad(p, x, y, eps);
  auto flat = join(p.encoder, p.decoder);
  opt.step(flat, lg.grad);
  split_into(flat, p.encoder, p.decoder);
  return lg.loss;
}

Tensor cvae_sample(const Cvae& p, std::span<const int> labels, Rng& rng) {
  check_labels(labels, p.classes);
  const Tensor z = gaussian_tensor(labels.size(), p.latent_dim, rng);
  Tensor out = p.decoder.forward(hconcat(z, one_hot(labels, p.classes)));
  if (p.range == OutputRange::unit_interval) clamp_unit(out);
  return out;
}

// --- CGAN -------------------------------------------------------------------

CganLosses cgan_train_step(Cgan& p, const Tensor& x, std::span<const int> y, Optimizer& opt_g, Optimizer& opt_d,
                           Rng& rng) {
  check_batch(x, y, p.sample_dim, p.classes);
  const std::size_t batch = x.rows();
  const bool bounded = p.range == OutputRange::unit_interval;
  const Tensor labels = one_hot(y, p.classes);
  const Tensor z = gaussian_tensor(batch, p.latent_dim, rng);

  const auto gen = p.generator.forward_trace(hconcat(z, labels));
  Tensor fake = gen.output;
  if (bounded)
    for (double& v : fake.data()) v = 0.5 * (v + 1.0);

  const std::vector<double> ones(batch, 1.0);
  const std::vector<double> zeros(batch, 0.0);

  CganLosses losses;
  {
    const auto real_trace = p.discriminator.forward_trace(hconcat(x, labels));
    const auto fake_trace = p.discriminator.forward_trace(hconcat(fake, labels));
    const auto real_loss = bce_with_logits(real_trace.output, ones);
    const auto fake_loss = bce_with_logits(fake_trace.output, zeros);
    losses.d_real = real_loss.value;
    losses.d_fake = fake_loss.value;
    auto grad = p.discriminator.backward(real_trace, real_loss.grad).param_grad;
    const auto grad_fake = p.discriminator.backward(fake_trace, fake_loss.grad).param_grad;
    for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += grad_fake[i];
    opt_d.step(p.discriminator.params(), grad);
  }
  {
    const auto fake_trace = p.discriminator.forward_trace(hconcat(fake, labels));
    const auto g_loss = bce_with_logits(fake_trace.output, ones);
    losses.g = g_loss.value;
    const auto d_back = p.discriminator.backward(fake_trace, g_loss.grad);
    Tensor fake_grad = slice_cols(d_back.input_grad, 0, p.sample_dim);
    if (bounded)
      for (double& v : fake_grad.data()) v *= 0.5;
    const auto g_back = p.generator.backward(gen, fake_grad);
    opt_g.step(p.generator.params(), g_back.param_grad);
  }
  return losses;
}

Tensor cgan_sample(const Cgan& p, std::span<const int> labels, Rng& rng) {
  check_labels(labels, p.classes);
  const Tensor z = gaussian_tensor(labels.size(), p.latent_dim, rng);
  Tensor out = p.generator.forward(hconcat(z, one_hot(labels, p.classes)));
  if (p.range == OutputRange::unit_interval) {
    for (double& v : out.data()) v = 0.5 * (v + 1.0);
    clamp_unit(out);
  }
  return out;
}

std::vector<double> cgan_discriminate(const Cgan& p, const Tensor& x, std::span<const int> y) {
  check_batch(x, y, p.sample_dim, p.classes);
  const Tensor logits = p.discriminator.forward(hconcat(x, one_hot(y, p.classes)));
  std::vector<double> prob(x.rows());
  for (std::size_t r = 0; r < x.rows(); ++r) prob[r] = 1.0 / (1.0 + std::exp(-logits(r, 0)));
  return prob;
}

// --- DDPM -------------------------------------------------------------------

std::vector<double> linear_beta_schedule(std::size_t timesteps, double beta_start, double beta_end) {
  if (timesteps < 1) throw DomainError("schedule needs at least one timestep");
  if (!(beta_start > 0.0 && beta_end < 1.0 && beta_start <= beta_end))
    throw DomainError("linear schedule needs 0 < beta_start <= beta_end < 1");
  std::vector<double> betas(timesteps);
  for (std::size_t i = 0; i < timesteps; ++i) {
    const double frac = timesteps == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(timesteps - 1);
    betas[i] = beta_start + (beta_end - beta_start) * frac;
  }
  return betas;
}

std::vector<double> alpha_bars(std::span<const double> betas) {
  if (betas.empty()) throw DomainError("empty beta schedule");
  std::vector<double> out(betas.size());
  double prod = 1.0;
  for (std::size_t i = 0; i < betas.size(); ++i) {
    if (!(betas[i] > 0.0 && betas[i] < 1.0)) throw DomainError("every beta must lie in (0, 1)");
    prod *= 1.0 - betas[i];
    out[i] = prod;
  }
  return out;
}

std::vector<double> time_embedding(std::size_t t, std::size_t dim) {
  std::vector<double> emb(dim);
  const std::size_t half = dim / 2;
  for (std::size_t i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
    emb[2 * i] = std::sin(static_cast<double>(t) * freq);
    emb[2 * i + 1] = std::cos(static_cast<double>(t) * freq);
  }
  return emb;
}

Tensor ddpm_forward_noise(const Tensor& x0, std::size_t t, std::span<const double> betas, const Tensor& eps) {
  if (t < 1 || t > betas.size())
    throw DomainError("timestep " + std::to_string(t) + " outside [1, " + std::to_string(betas.size()) + "]");
  if (eps.shape() != x0.shape()) throw ShapeError("noise shape differs from x0");
  const double abar = alpha_bars(betas)[t - 1];
  const double a = std::sqrt(abar);
  const double b = std::sqrt(1.0 - abar);
  Tensor out(x0.shape());
  auto o = out.data();
  auto x = x0.data();
  auto e = eps.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = a * x[i] + b * e[i];
  return out;
}

Tensor ddpm_forward_noise(const Tensor& x0, std::size_t t, std::span<const double> betas, Rng& rng) {
  if (t < 1 || t > betas.size())
    throw DomainError("timestep " + std::to_string(t) + " outside [1, " + std::to_string(betas.size()) + "]");
  Tensor eps(x0.shape());
  for (double& v : eps.data()) v = rng.normal();
  return ddpm_forward_noise(x0, t, betas, eps);
}

Tensor ddpm_predict_noise(const Ddpm& p, const Tensor& x_t, std::span<const std::size_t> t,
                          std::span<const int> labels) {
  return p.denoiser.forward(denoiser_input(p, x_t, t, labels));
}

Tensor guided_epsilon(const Tensor& eps_cond, const Tensor& eps_uncond, double w) {
  if (eps_cond.shape() != eps_uncond.shape()) throw ShapeError("guidance: eps shapes differ");
  Tensor out(eps_cond.shape());
  auto o = out.data();
  auto c = eps_cond.data();
  auto u = eps_uncond.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = (1.0 + w) * c[i] - w * u[i];
  return out;
}

GenLossGrad ddpm_loss_and_grad(const Ddpm& p, const Tensor& x, std::span<const int> labels,
                               std::span<const std::size_t> t, const Tensor& eps) {
  if (x.rows() == 0 || x.rows() != labels.size() || x.rows() != t.size())
    throw DomainError("DDPM batch, labels and timesteps disagree or are empty");
  if (x.cols() != p.sample_dim) throw ShapeError("DDPM batch dimension mismatch");
  if (eps.shape() != x.shape()) throw ShapeError("DDPM noise shape mismatch");
  const auto abar = alpha_bars(p.betas);
  const Tensor x0 = to_model_space(p, x);
  Tensor x_t = Tensor::matrix(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    if (t[r] < 1 || t[r] > p.betas.size()) throw DomainError("timestep outside [1, T]");
    const double a = std::sqrt(abar[t[r] - 1]);
    const double b = std::sqrt(1.0 - abar[t[r] - 1]);
    for (std::size_t j = 0; j < x.cols(); ++j) x_t(r, j) = a * x0(r, j) + b * eps(r, j);
  }
  const auto trace = p.denoiser.forward_trace(denoiser_input(p, x_t, t, labels));
  const auto loss = squared_error(trace.output, eps);
  return {loss.value, p.denoiser.backward(trace, loss.grad).param_grad};
}

double ddpm_train_step(Ddpm& p, const Tensor& x, std::span<const int> y, Optimizer& opt, Rng& rng) {
  check_batch(x, y, p.sample_dim, p.classes);
  const std::size_t batch = x.rows();
  std::vector<std::size_t> t(batch);
  for (auto& ti : t) ti = 1 + rng.below(p.betas.size());
  const Tensor eps = gaussian_tensor(batch, p.sample_dim, rng);
  std::vector<int> labels(y.begin(), y.end());
  for (auto& label : labels)
    if (rng.uniform() < p.uncond_drop_prob) label = -1;
  auto lg = ddpm_loss_and_grad(p, x, labels, t, eps);
  opt.step(p.denoiser.params(), lg.grad);
  return lg.loss;
}

Tensor ddpm_sample(const Ddpm& p, std::span<const int> labels, const GuidanceConfig& g, Rng& rng) {
  check_labels(labels, p.classes);
  if (!(g.w >= 0.0) || !std::isfinite(g.w)) throw ConfigError("guidance weight must be finite and non-negative");
  if (g.w > 0.0 && p.uncond_drop_prob == 0.0)
    throw ConfigError("guidance w > 0 needs a model trained with label dropout");
  const std::size_t n = labels.size();
  const auto abar = alpha_bars(p.betas);
  const std::vector<int> null_labels(n, -1);
  Tensor x = gaussian_tensor(n, p.sample_dim, rng);
  for (std::size_t t = p.betas.size(); t >= 1; --t) {
    const std::vector<std::size_t> ts(n, t);
    Tensor eps = ddpm_predict_noise(p, x, ts, labels);
    if (g.w != 0.0) eps = guided_epsilon(eps, ddpm_predict_noise(p, x, ts, null_labels), g.w);
    const double beta = p.betas[t - 1];
    const double inv_sqrt_alpha = 1.0 / std::sqrt(1.0 - beta);
    const double eps_coef = beta / std::sqrt(1.0 - abar[t - 1]);
    auto xd = x.data();
    auto ed = eps.data();
    for (std::size_t i = 0; i < xd.size(); ++i) xd[i] = inv_sqrt_alpha * (xd[i] - eps_coef * ed[i]);
    if (t > 1) {
      const double sigma = std::sqrt(beta);
      for (double& v : x.data()) v += sigma * rng.normal();
    }
  }
  if (p.range == OutputRange::unit_interval) {
    for (double& v : x.data()) v = 0.5 * (v + 1.0);
    clamp_unit(x);
  }
  x.require_finite("DDPM sample");
  return x;
}

// --- family-agnostic ----------------------------------------------------------

GenHyper default_gen_hyper(GenFamily family) {
  switch (family) {
    case GenFamily::cgan:
      return {2e-4, 0.5, 0.999};
    case GenFamily::cvae:
      return {1e-3, 0.9, 0.999};
    case GenFamily::cddpm:
      return {1e-4, 0.9, 0.999};
  }
  return {};
}

GenOptimizer make_gen_optimizer(const GenModelParams& p, const GenHyper& hyper) {
  const AdamConfig cfg{hyper.lr, hyper.beta1, hyper.beta2, 1e-8};
  if (const auto* g = std::get_if<Cgan>(&p))
    return {Optimizer::adam(cfg, g->generator.param_count()), Optimizer::adam(cfg, g->discriminator.param_count())};
  return {Optimizer::adam(cfg, gen_param_count(p)), std::nullopt};
}

double gen_train_step(GenModelParams& p, const Tensor& x, std::span<const int> y, GenOptimizer& opt, Rng& rng) {
  if (auto* v = std::get_if<Cvae>(&p)) return cvae_train_step(*v, x, y, opt.primary, rng);
  if (auto* g = std::get_if<Cgan>(&p)) {
    if (!opt.secondary) throw UsageError("CGAN training needs a discriminator optimizer");
    const auto losses = cgan_train_step(*g, x, y, opt.primary, *opt.secondary, rng);
    return losses.discriminator() + losses.g;
  }
  return ddpm_train_step(std::get<Ddpm>(p), x, y, opt.primary, rng);
}

Tensor gen_sample(const GenModelParams& p, std::span<const int> labels, const GuidanceConfig& g, Rng& rng) {
  if (const auto* v = std::get_if<Cvae>(&p)) return cvae_sample(*v, labels, rng);
  if (const auto* c = std::get_if<Cgan>(&p)) return cgan_sample(*c, labels, rng);
  return ddpm_sample(std::get<Ddpm>(p), labels, g, rng);
}

}  // namespace gefl
