#include "egdp/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "egdp/error.hpp"

namespace egdp::diffusion {

namespace {

NoiseSchedule build(std::size_t K, double beta_start, double beta_end, double scale) {
  if (K == 0) throw ConfigError("schedule.K: must be >= 1");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
    throw ConfigError("schedule.beta: need 0 < beta_start <= beta_end < 1");
  }
  NoiseSchedule s;
  s.K = K;
  s.beta_start = beta_start;
  s.beta_end = beta_end;
  s.beta.assign(K + 1, 0.0);
  s.alpha.assign(K + 1, 1.0);
  s.alpha_bar.assign(K + 1, 1.0);
  for (std::size_t k = 1; k <= K; ++k) {
    const double frac = K == 1 ? 0.0 : static_cast<double>(k - 1) / static_cast<double>(K - 1);
    s.beta[k] = std::min((beta_start + (beta_end - beta_start) * frac) * scale, 0.999);
    s.alpha[k] = 1.0 - s.beta[k];
    s.alpha_bar[k] = s.alpha_bar[k - 1] * s.alpha[k];
  }
  return s;
}

void check_step(const NoiseSchedule& s, std::size_t k, const char* op) {
  if (k < 1 || k > s.K) {
    throw InputError(std::string(op) + ": step " + std::to_string(k) + " outside [1, " + std::to_string(s.K) + "]");
  }
}

void check_same(const Tensor& a, const Tensor& b, const char* op) {
  if (a.size() != b.size()) throw ShapeError(std::string(op) + ": " + a.shape_str() + " vs " + b.shape_str());
}

}  // namespace

double NoiseSchedule::posterior_variance(std::size_t k) const {
  check_step(*this, k, "posterior_variance");
  return beta[k] * (1.0 - alpha_bar[k - 1]) / (1.0 - alpha_bar[k]);
}

NoiseSchedule make_schedule(std::size_t K, double beta_start, double beta_end) {
  return build(K, beta_start, beta_end, 1.0);
}

NoiseSchedule make_scaled_schedule(std::size_t K, double beta_start, double beta_end) {
  if (K == 0) throw ConfigError("schedule.K: must be >= 1");
  return build(K, beta_start, beta_end, 1000.0 / static_cast<double>(K));
}

Tensor q_sample(const NoiseSchedule& s, const Tensor& x0, std::size_t k, const Tensor& eps) {
  check_step(s, k, "q_sample");
  check_same(x0, eps, "q_sample");
  const double a = std::sqrt(s.alpha_bar[k]);
  const double b = std::sqrt(1.0 - s.alpha_bar[k]);
  Tensor out = x0;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x0[i] + b * eps[i];
  return out;
}

Tensor posterior_mean(const NoiseSchedule& s, const Tensor& x0_hat, const Tensor& x_k, std::size_t k) {
  check_step(s, k, "posterior_mean");
  check_same(x0_hat, x_k, "posterior_mean");
  const double ab = s.alpha_bar[k];
  const double ab_prev = s.alpha_bar[k - 1];
  const double sqrt_ab = std::sqrt(ab);
  const double sqrt_1m_ab = std::sqrt(1.0 - ab);
  const double c0 = std::sqrt(ab_prev);
  const double ce = (1.0 - ab_prev) * std::sqrt(s.alpha[k]) / sqrt_1m_ab;
  Tensor out = x_k;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double eps = (x_k[i] - sqrt_ab * x0_hat[i]) / sqrt_1m_ab;
    out[i] = c0 * x0_hat[i] + ce * eps;
  }
  return out;
}

Tensor stride_posterior_mean(const NoiseSchedule& s, const Tensor& x0_hat, const Tensor& x_k, std::size_t from,
                             std::size_t to) {
  check_step(s, from, "stride_posterior_mean");
  if (to >= from) throw InputError("stride_posterior_mean: target step must be below the source step");
  if (from - to == 1) return posterior_mean(s, x0_hat, x_k, from);
  check_same(x0_hat, x_k, "stride_posterior_mean");
  const double ab = s.alpha_bar[from];
  const double ab_to = s.alpha_bar[to];
  const double a_jump = ab / ab_to;
  const double c0 = std::sqrt(ab_to) * (1.0 - a_jump) / (1.0 - ab);
  const double ck = std::sqrt(a_jump) * (1.0 - ab_to) / (1.0 - ab);
  Tensor out = x_k;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = c0 * x0_hat[i] + ck * x_k[i];
  return out;
}

double stride_posterior_variance(const NoiseSchedule& s, std::size_t from, std::size_t to) {
  check_step(s, from, "stride_posterior_variance");
  if (to >= from) throw InputError("stride_posterior_variance: target step must be below the source step");
  if (from - to == 1) return s.posterior_variance(from);
  const double ab = s.alpha_bar[from];
  const double ab_to = s.alpha_bar[to];
  return (1.0 - ab / ab_to) * (1.0 - ab_to) / (1.0 - ab);
}

Tensor cfg_combine(const Tensor& uncond, const Tensor& cond, double omega) {
  check_same(uncond, cond, "cfg_combine");
  Tensor out = uncond;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = uncond[i] + omega * (cond[i] - uncond[i]);
  return out;
}

std::vector<std::size_t> step_ladder(std::size_t K, std::size_t gamma) {
  if (K == 0) throw ConfigError("schedule.K: must be >= 1");
  if (gamma == 0) throw ConfigError("sampler.gamma: must be >= 1");
  std::vector<std::size_t> ladder;
  for (std::size_t k = K; k > 0; k = k > gamma ? k - gamma : 0) ladder.push_back(k);
  return ladder;
}

void SamplerConfig::validate() const {
  if (gamma == 0) throw ConfigError("sampler.gamma: must be >= 1");
  if (!(omega >= 0.0) || !std::isfinite(omega)) throw ConfigError("sampler.omega: must be finite and >= 0");
  if (!(temperature > 0.0 && temperature <= 1.0)) throw ConfigError("sampler.temperature: must lie in (0, 1]");
}

SampleResult sample_reverse(const Denoiser& denoiser, const NoiseSchedule& s, const SamplerConfig& cfg,
                            std::size_t horizon, std::size_t state_dim, const Tensor& history, Rng& rng) {
  cfg.validate();
  const std::size_t t = history.empty() ? 0 : history.rows();
  if (t > horizon || (t > 0 && history.cols() != state_dim)) {
    throw ShapeError("sample_reverse: history " + history.shape_str() + " does not fit a " + std::to_string(horizon) +
                     "x" + std::to_string(state_dim) + " trajectory");
  }
  const auto inpaint = [&](Tensor& x) {
    for (std::size_t i = 0; i < t * state_dim; ++i) x[i] = history[i];
  };

  SampleResult res;
  Tensor x(horizon, state_dim);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = rng.normal();

  const auto ladder = step_ladder(s.K, cfg.gamma);
  for (std::size_t k : ladder) {
    const std::size_t to = k > cfg.gamma ? k - cfg.gamma : 0;
    inpaint(x);
    const Tensor uncond = denoiser(x, k, true);
    const Tensor cond = denoiser(x, k, false);
    res.denoiser_evals += 2;
    const Tensor x0_hat = cfg_combine(uncond, cond, cfg.omega);
    if (!x0_hat.all_finite()) throw NumericError("sample_reverse: non-finite denoiser output at step " + std::to_string(k));
    if (to == 0) {
      x = stride_posterior_mean(s, x0_hat, x, k, 0);
      break;
    }
    Tensor mean = stride_posterior_mean(s, x0_hat, x, k, to);
    const double sd = std::sqrt(cfg.temperature * stride_posterior_variance(s, k, to));
    for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += sd * rng.normal();
    x = std::move(mean);
  }
  inpaint(x);
  res.x0 = std::move(x);
  return res;
}

std::size_t sample_step(std::size_t K, Rng& rng) {
  if (K == 0) throw ConfigError("schedule.K: must be >= 1");
  return static_cast<std::size_t>(rng.uniform_int(1, static_cast<std::int64_t>(K)));
}

double ddpm_loss(const NoiseSchedule& s, const std::vector<Tensor>& x0_batch, const X0Predictor& f, Rng& rng) {
  if (x0_batch.empty()) throw InputError("ddpm_loss: empty batch");
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t b = 0; b < x0_batch.size(); ++b) {
    const Tensor& x0 = x0_batch[b];
    const std::size_t k = sample_step(s.K, rng);
    Tensor eps(x0.shape());
    for (std::size_t i = 0; i < eps.size(); ++i) eps[i] = rng.normal();
    const Tensor pred = f(q_sample(s, x0, k, eps), k, b);
    check_same(pred, x0, "ddpm_loss");
    for (std::size_t i = 0; i < x0.size(); ++i) total += (x0[i] - pred[i]) * (x0[i] - pred[i]);
    count += x0.size();
  }
  const double loss = total / static_cast<double>(count);
  if (!std::isfinite(loss)) throw NumericError("ddpm_loss: non-finite loss");
  return loss;
}

}  // namespace egdp::diffusion
