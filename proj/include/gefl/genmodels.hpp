#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "gefl/nn.hpp"
#include "gefl/rng.hpp"
#include "gefl/tensor.hpp"

namespace gefl {

enum class GenFamily { cvae, cgan, cddpm };

std::string to_string(GenFamily f);
GenFamily gen_family_from_string(const std::string& name);

// unit_interval: image-like data; samples are clamped (CVAE, DDPM) or
// squashed by tanh and rescaled (CGAN) into [0, 1].
// unbounded: blobs and intermediate features; outputs are left as is.
enum class OutputRange { unbounded, unit_interval };

struct GenModelSpec {
  GenFamily family = GenFamily::cvae;
  std::size_t classes = 2;
  std::size_t sample_dim = 2;
  OutputRange range = OutputRange::unbounded;
  std::vector<std::size_t> hidden = {64, 64};
  std::size_t latent_dim = 16;  // CVAE latent size / CGAN noise size
  std::size_t timesteps = 100;  // DDPM T
  double beta_start = 1e-4;
  double beta_end = 0.02;
  double uncond_drop_prob = 0.1;
  std::size_t time_embed_dim = 16;
  bool operator==(const GenModelSpec&) const = default;
};

// Encoder maps x (+) onehot(y) to (mu, log sigma^2); decoder maps z (+) onehot(y) to x.
struct Cvae {
  Network encoder;
  Network decoder;
  std::size_t latent_dim = 0;
  std::size_t classes = 0;
  std::size_t sample_dim = 0;
  OutputRange range = OutputRange::unbounded;
  bool operator==(const Cvae&) const = default;
};

// Generator maps z (+) onehot(y) to x; discriminator maps x (+) onehot(y) to one logit.
struct Cgan {
  Network generator;
  Network discriminator;
  std::size_t latent_dim = 0;
  std::size_t classes = 0;
  std::size_t sample_dim = 0;
  OutputRange range = OutputRange::unbounded;
  bool operator==(const Cgan&) const = default;
};

// Denoiser maps x_t (+) time_embedding(t) (+) label_embedding to predicted noise.
// The null (unconditional) label embedding is the zero vector.
struct Ddpm {
  Network denoiser;
  std::vector<double> betas;  // betas[t - 1] for t = 1..T
  double uncond_drop_prob = 0.1;
  std::size_t classes = 0;
  std::size_t sample_dim = 0;
  std::size_t time_embed_dim = 16;
  OutputRange range = OutputRange::unbounded;
  bool operator==(const Ddpm&) const = default;
};

using GenModelParams = std::variant<Cvae, Cgan, Ddpm>;

struct GuidanceConfig {
  double w = 0.0;
};

GenModelParams make_gen_model(const GenModelSpec& spec, Rng& init_rng);

GenFamily family_of(const GenModelParams& p);
std::size_t gen_classes(const GenModelParams& p);
std::size_t gen_sample_dim(const GenModelParams& p);
std::size_t gen_param_count(const GenModelParams& p);

// CVAE: encoder then decoder. CGAN: generator then discriminator. DDPM: denoiser.
std::vector<double> flatten_gen(const GenModelParams& p);
void unflatten_gen(GenModelParams& p, std::span<const double> flat);

// --- CVAE -----------------------------------------------------------------

// 0.5 * sum(mu^2 + exp(logvar) - 1 - logvar): KL(N(mu, sigma^2) || N(0, I)).
double gaussian_kl(std::span<const double> mu, std::span<const double> logvar);

struct GenLossGrad {
  double loss = 0.0;
  std::vector<double> grad;  // flatten_gen layout
};

// Loss and gradient for a fixed reparameterisation noise eps [B x l].
GenLossGrad cvae_loss_and_grad(const Cvae& p, const Tensor& x, std::span<const int> y, const Tensor& eps);

// One joint Adam/SGD step on encoder + decoder. Returns the batch mean of
// squared reconstruction error (summed over dimensions) plus KL.
double cvae_train_step(Cvae& p, const Tensor& x, std::span<const int> y, Optimizer& opt, Rng& rng);

// decode(z (+) onehot(y)), z ~ N(0, I); clamped to [0, 1] for unit_interval data.
Tensor cvae_sample(const Cvae& p, std::span<const int> labels, Rng& rng);

// --- CGAN -----------------------------------------------------------------

struct CganLosses {
  double d_real = 0.0;  // BCE(D(x, y), 1)
  double d_fake = 0.0;  // BCE(D(G(z, y), y), 0)
  double g = 0.0;       // BCE(D(G(z, y), y), 1), non-saturating
  double discriminator() const { return d_real + d_fake; }
};

// One discriminator step followed by one generator step on the same z.
CganLosses cgan_train_step(Cgan& p, const Tensor& x, std::span<const int> y, Optimizer& opt_g, Optimizer& opt_d,
                           Rng& rng);

Tensor cgan_sample(const Cgan& p, std::span<const int> labels, Rng& rng);

// Discriminator probability that each row of x is real given labels.
std::vector<double> cgan_discriminate(const Cgan& p, const Tensor& x, std::span<const int> y);

// --- DDPM -----------------------------------------------------------------

std::vector<double> linear_beta_schedule(std::size_t timesteps, double beta_start, double beta_end);

// abar[t - 1] = prod_{s <= t} (1 - beta_s). Throws DomainError unless every
// beta lies in (0, 1).
std::vector<double> alpha_bars(std::span<const double> betas);

std::vector<double> time_embedding(std::size_t t, std::size_t dim);

// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps.
Tensor ddpm_forward_noise(const Tensor& x0, std::size_t t, std::span<const double> betas, const Tensor& eps);
Tensor ddpm_forward_noise(const Tensor& x0, std::size_t t, std::span<const double> betas, Rng& rng);

// Raw denoiser prediction; label -1 selects the null embedding.
Tensor ddpm_predict_noise(const Ddpm& p, const Tensor& x_t, std::span<const std::size_t> t,
                          std::span<const int> labels);

// (1 + w) * eps_cond - w * eps_uncond, element-wise.
Tensor guided_epsilon(const Tensor& eps_cond, const Tensor& eps_uncond, double w);

// Loss and denoiser gradient for fixed per-row timesteps, noise and labels
// (label -1 = null embedding).
GenLossGrad ddpm_loss_and_grad(const Ddpm& p, const Tensor& x, std::span<const int> labels,
                               std::span<const std::size_t> t, const Tensor& eps);

// Simplified objective: mean over rows of ||eps_hat - eps||^2 with t uniform in
// [1, T] and labels dropped to the null embedding with uncond_drop_prob.
double ddpm_train_step(Ddpm& p, const Tensor& x, std::span<const int> y, Optimizer& opt, Rng& rng);

// Ancestral sampling t = T..1 with sigma_t^2 = beta_t. Draw order from rng:
// x_T row-major, then for each t > 1 one row-major noise tensor.
Tensor ddpm_sample(const Ddpm& p, std::span<const int> labels, const GuidanceConfig& g, Rng& rng);

// --- family-agnostic surface ------------------------------------------------

struct GenHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
};

// Defaults per family: cgan lr 2e-4 with Adam(0.5, 0.999); cvae lr 1e-3;
// cddpm lr 1e-4 (both Adam(0.9, 0.999)).
GenHyper default_gen_hyper(GenFamily family);

struct GenOptimizer {
  Optimizer primary;                    // cvae / ddpm / cgan generator
  std::optional<Optimizer> secondary;   // cgan discriminator
};

GenOptimizer make_gen_optimizer(const GenModelParams& p, const GenHyper& hyper);

// One family-appropriate local step; returns the family loss
// (cgan: discriminator + generator loss).
double gen_train_step(GenModelParams& p, const Tensor& x, std::span<const int> y, GenOptimizer& opt, Rng& rng);

Tensor gen_sample(const GenModelParams& p, std::span<const int> labels, const GuidanceConfig& g, Rng& rng);

}  // namespace gefl
