#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "egdp/rng.hpp"
#include "egdp/tensor.hpp"

namespace egdp::diffusion {

// Tables are indexed by k in [1, K]; index 0 holds the k = 0 convention
// (beta 0, alpha 1, alpha_bar 1).
struct NoiseSchedule {
  std::size_t K = 0;
  double beta_start = 0.0;
  double beta_end = 0.0;
  std::vector<double> beta;
  std::vector<double> alpha;
  std::vector<double> alpha_bar;

  // beta_k (1 - alpha_bar_{k-1}) / (1 - alpha_bar_k)
  double posterior_variance(std::size_t k) const;
};

// Linear beta_k from beta_start to beta_end over K steps.
NoiseSchedule make_schedule(std::size_t K, double beta_start = 1e-4, double beta_end = 0.02);

// The linear 1e-4 -> 0.02 shape rescaled by 1000 / K, so that short
// schedules still end near pure noise. Betas are capped at 0.999.
NoiseSchedule make_scaled_schedule(std::size_t K, double beta_start = 1e-4, double beta_end = 0.02);

// sqrt(alpha_bar_k) x0 + sqrt(1 - alpha_bar_k) eps
Tensor q_sample(const NoiseSchedule& s, const Tensor& x0, std::size_t k, const Tensor& eps);

// One-step posterior mean with eps reconstructed from (x_k, x0_hat):
// sqrt(alpha_bar_{k-1}) x0_hat + (1 - alpha_bar_{k-1}) sqrt(alpha_k) / sqrt(1 - alpha_bar_k) * eps.
Tensor posterior_mean(const NoiseSchedule& s, const Tensor& x0_hat, const Tensor& x_k, std::size_t k);

// Posterior mean/variance of q(x_{to} | x_{from}, x0) for a jump from > to.
// A unit jump defers to posterior_mean / posterior_variance exactly.
Tensor stride_posterior_mean(const NoiseSchedule& s, const Tensor& x0_hat, const Tensor& x_k, std::size_t from,
                             std::size_t to);
double stride_posterior_variance(const NoiseSchedule& s, std::size_t from, std::size_t to);

// uncond + omega (cond - uncond)
Tensor cfg_combine(const Tensor& uncond, const Tensor& cond, double omega);

// Visited steps K, K - gamma, ... down to the last positive step; each
// transition lands on max(k - gamma, 0).
std::vector<std::size_t> step_ladder(std::size_t K, std::size_t gamma);

struct SamplerConfig {
  std::size_t gamma = 4;
  double omega = 1.5;
  double temperature = 0.5;  // scales the posterior variance
  std::uint64_t seed = 0;

  void validate() const;
};

// Returns x0_hat (T x D_s) for noisy input x_k at step k. `dropped` selects
// the null condition.
using Denoiser = std::function<Tensor(const Tensor& x_k, std::size_t k, bool dropped)>;

struct SampleResult {
  Tensor x0;
  std::size_t denoiser_evals = 0;
};

// Reverse process from x_K ~ N(0, I). Before every denoiser call the first
// history.rows() rows of the current sample are overwritten with `history`,
// and once more on the returned trajectory. Noise comes from `rng`: T*D_s
// normals for x_K, then T*D_s per non-final transition.
SampleResult sample_reverse(const Denoiser& denoiser, const NoiseSchedule& s, const SamplerConfig& cfg,
                            std::size_t horizon, std::size_t state_dim, const Tensor& history, Rng& rng);

// Uniform draw from {1, ..., K}.
std::size_t sample_step(std::size_t K, Rng& rng);

// Predicts x0 for item `item` of a batch from its noisy version at step k.
using X0Predictor = std::function<Tensor(const Tensor& x_k, std::size_t k, std::size_t item)>;

// Mean over all elements of (x0 - f(q_sample(x0, k, eps), k))^2 with one k and
// one eps draw per item.
double ddpm_loss(const NoiseSchedule& s, const std::vector<Tensor>& x0_batch, const X0Predictor& f, Rng& rng);

}  // namespace egdp::diffusion
