#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "egdp/diffusion.hpp"
#include "egdp/error.hpp"
#include "support.hpp"

using namespace egdp;
using namespace egdp::diffusion;
using egdp::testing::random_tensor;

namespace {

// Plain DDPM ancestral sampler, one step at a time, written independently
// of the stride code.
Tensor reference_sampler(const Denoiser& den, const NoiseSchedule& s, const SamplerConfig& cfg, std::size_t T,
                         std::size_t D, const Tensor& history, Rng& rng) {
  const std::size_t t = history.empty() ? 0 : history.rows();
  Tensor x(T, D);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = rng.normal();
  for (std::size_t k = s.K; k >= 1; --k) {
    for (std::size_t i = 0; i < t * D; ++i) x[i] = history[i];
    const Tensor u = den(x, k, true);
    const Tensor c = den(x, k, false);
    Tensor x0(T, D);
    for (std::size_t i = 0; i < x0.size(); ++i) x0[i] = u[i] + cfg.omega * (c[i] - u[i]);
    Tensor mean = posterior_mean(s, x0, x, k);
    if (k > 1) {
      const double sd = std::sqrt(cfg.temperature * s.posterior_variance(k));
      for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += sd * rng.normal();
    }
    x = mean;
  }
  for (std::size_t i = 0; i < t * D; ++i) x[i] = history[i];
  return x;
}

// Deterministic toy denoiser whose conditional branch differs from the
// unconditional one.
Denoiser toy_denoiser(std::size_t* calls = nullptr) {
  return [calls](const Tensor& x, std::size_t k, bool dropped) {
    if (calls) ++*calls;
    Tensor out = x;
    for (std::size_t i = 0; i < out.size(); ++i) {
      out[i] = std::tanh(0.5 * x[i] + 0.01 * static_cast<double>(k)) + (dropped ? 0.0 : 0.2);
    }
    return out;
  };
}

}  // namespace

TEST(DiffusionSchedule, TwoStepProduct) {
  const NoiseSchedule s = make_schedule(2, 0.1, 0.1);
  EXPECT_DOUBLE_EQ(s.alpha_bar[1], 0.9);
  EXPECT_DOUBLE_EQ(s.alpha_bar[2], 0.81);
  EXPECT_EQ(s.alpha_bar[0], 1.0);
}

TEST(DiffusionSchedule, SingleStep) {
  const NoiseSchedule s = make_schedule(1, 0.3, 0.3);
  EXPECT_EQ(s.alpha_bar[1], 1.0 - s.beta[1]);
  EXPECT_DOUBLE_EQ(s.beta[1], 0.3);
}

TEST(DiffusionSchedule, LinearBetasAndExactRecursion) {
  for (const NoiseSchedule& s : {make_schedule(1000), make_schedule(32), make_scaled_schedule(32), make_scaled_schedule(7)}) {
    ASSERT_EQ(s.beta.size(), s.K + 1);
    for (std::size_t k = 1; k <= s.K; ++k) {
      EXPECT_GT(s.beta[k], 0.0);
      EXPECT_LT(s.beta[k], 1.0);
      EXPECT_EQ(s.alpha[k], 1.0 - s.beta[k]);
      EXPECT_EQ(s.alpha_bar[k], s.alpha_bar[k - 1] * s.alpha[k]);
      EXPECT_LT(s.alpha_bar[k], s.alpha_bar[k - 1]);
    }
  }
  const NoiseSchedule s = make_schedule(1000);
  EXPECT_NEAR(s.beta[1], 1e-4, 1e-18);
  EXPECT_NEAR(s.beta[1000], 0.02, 1e-15);
  EXPECT_NEAR(s.beta[500] - s.beta[499], (0.02 - 1e-4) / 999.0, 1e-15);
}

TEST(DiffusionSchedule, ThousandStepsEndNearPureNoise) {
  const NoiseSchedule s = make_schedule(1000);
  double prod = 1.0;
  for (std::size_t k = 1; k <= 1000; ++k) prod *= 1.0 - (1e-4 + (0.02 - 1e-4) * static_cast<double>(k - 1) / 999.0);
  EXPECT_LT(s.alpha_bar[1000], 5e-5);
  EXPECT_NEAR(s.alpha_bar[1000], prod, 1e-15);
}

TEST(DiffusionSchedule, ScaledScheduleMatchesTheThousandStepEndpoint) {
  const NoiseSchedule s = make_scaled_schedule(32);
  EXPECT_NEAR(s.beta[1], 1e-4 * 1000.0 / 32.0, 1e-15);
  EXPECT_NEAR(s.beta[32], 0.02 * 1000.0 / 32.0, 1e-15);
  EXPECT_LT(s.alpha_bar[32], 1e-4);
}

TEST(DiffusionSchedule, InvalidBoundsAreConfigErrors) {
  EXPECT_THROW(make_schedule(0), ConfigError);
  EXPECT_THROW(make_schedule(10, 0.0, 0.02), ConfigError);
  EXPECT_THROW(make_schedule(10, 0.03, 0.02), ConfigError);
  EXPECT_THROW(make_schedule(10, 1e-4, 1.0), ConfigError);
}

TEST(DiffusionForward, ZeroNoiseScalesTheSignal) {
  const NoiseSchedule s = make_scaled_schedule(32);
  Rng rng(1);
  const Tensor x0 = random_tensor(4, 3, rng);
  const Tensor xk = q_sample(s, x0, 10, Tensor(4, 3, 0.0));
  for (std::size_t i = 0; i < x0.size(); ++i) EXPECT_EQ(xk[i], std::sqrt(s.alpha_bar[10]) * x0[i]);
}

TEST(DiffusionForward, LastStepIsNearlyTheNoise) {
  const NoiseSchedule s = make_schedule(1000);
  Rng rng(2);
  const Tensor x0 = random_tensor(4, 3, rng);
  const Tensor eps = random_tensor(4, 3, rng);
  const Tensor xk = q_sample(s, x0, 1000, eps);
  for (std::size_t i = 0; i < x0.size(); ++i) EXPECT_NEAR(xk[i], eps[i], 0.02);
}

TEST(DiffusionForward, ShapeAndStepErrors) {
  const NoiseSchedule s = make_scaled_schedule(8);
  EXPECT_THROW(q_sample(s, Tensor(2, 2), 1, Tensor(2, 3)), ShapeError);
  EXPECT_THROW(q_sample(s, Tensor(2, 2), 9, Tensor(2, 2)), InputError);
  EXPECT_THROW(posterior_mean(s, Tensor(2, 2), Tensor(2, 2), 0), InputError);
  EXPECT_THROW(stride_posterior_mean(s, Tensor(2, 2), Tensor(2, 2), 3, 3), InputError);
}

TEST(DiffusionForward, MonteCarloMarginalMatchesClosedForm) {
  const NoiseSchedule s = make_scaled_schedule(32);
  const Tensor x0 = Tensor::from_data({1, 1}, {0.7});
  const std::size_t n = 10000;
  for (std::size_t k : {1u, 8u, 20u, 32u}) {
    Rng rng(100 + k);
    double sum = 0.0, sq = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double v = q_sample(s, x0, k, Tensor::from_data({1, 1}, {rng.normal()}))[0];
      sum += v;
      sq += v * v;
    }
    const double mean = sum / n;
    const double var = sq / n - mean * mean;
    const double true_var = 1.0 - s.alpha_bar[k];
    const double se_mean = std::sqrt(true_var / n);
    const double se_var = true_var * std::sqrt(2.0 / (n - 1));
    EXPECT_NEAR(mean, std::sqrt(s.alpha_bar[k]) * 0.7, 3.0 * se_mean) << k;
    EXPECT_NEAR(var, true_var, 3.0 * se_var) << k;
  }
}

TEST(DiffusionPosterior, MatchesTheQPosteriorClosedForm) {
  const NoiseSchedule s = make_scaled_schedule(32);
  Rng rng(3);
  for (std::size_t k = 1; k <= 32; ++k) {
    const Tensor x0 = random_tensor(3, 2, rng);
    const Tensor xk = q_sample(s, x0, k, random_tensor(3, 2, rng));
    const Tensor mu = posterior_mean(s, x0, xk, k);
    const double ab = s.alpha_bar[k], abp = s.alpha_bar[k - 1];
    const double c0 = std::sqrt(abp) * s.beta[k] / (1.0 - ab);
    const double ck = std::sqrt(s.alpha[k]) * (1.0 - abp) / (1.0 - ab);
    for (std::size_t i = 0; i < x0.size(); ++i) EXPECT_NEAR(mu[i], c0 * x0[i] + ck * xk[i], 1e-12) << k;
    EXPECT_NEAR(s.posterior_variance(k), s.beta[k] * (1.0 - abp) / (1.0 - ab), 1e-18);
  }
}

TEST(DiffusionPosterior, FirstStepReturnsThePrediction) {
  const NoiseSchedule s = make_scaled_schedule(32);
  Rng rng(4);
  const Tensor x0 = random_tensor(3, 2, rng);
  const Tensor xk = random_tensor(3, 2, rng);
  const Tensor mu = posterior_mean(s, x0, xk, 1);
  for (std::size_t i = 0; i < x0.size(); ++i) EXPECT_NEAR(mu[i], x0[i], 1e-12);
  EXPECT_EQ(s.posterior_variance(1), 0.0);
}

TEST(DiffusionPosterior, NoNoiseLimitKeepsTheInput) {
  const NoiseSchedule s = make_schedule(4, 1e-9, 1e-9);
  Rng rng(5);
  const Tensor xk = random_tensor(3, 2, rng);
  const Tensor mu = posterior_mean(s, xk, xk, 3);
  for (std::size_t i = 0; i < xk.size(); ++i) EXPECT_NEAR(mu[i], xk[i], 1e-8);
}

TEST(DiffusionPosterior, StrideMatchesTheJumpPosterior) {
  const NoiseSchedule s = make_scaled_schedule(32);
  Rng rng(6);
  const Tensor x0 = random_tensor(2, 2, rng);
  const Tensor xk = random_tensor(2, 2, rng);
  const std::size_t from = 20, to = 12;
  const double a_from = s.alpha_bar[from], a_to = s.alpha_bar[to];
  const double a_step = a_from / a_to;  // product of alphas over the jump
  const double c0 = std::sqrt(a_to) * (1.0 - a_step) / (1.0 - a_from);
  const double ck = std::sqrt(a_step) * (1.0 - a_to) / (1.0 - a_from);
  const Tensor mu = stride_posterior_mean(s, x0, xk, from, to);
  for (std::size_t i = 0; i < x0.size(); ++i) EXPECT_NEAR(mu[i], c0 * x0[i] + ck * xk[i], 1e-12);
  EXPECT_NEAR(stride_posterior_variance(s, from, to), (1.0 - a_step) * (1.0 - a_to) / (1.0 - a_from), 1e-15);
  EXPECT_EQ(stride_posterior_mean(s, x0, xk, 9, 8), posterior_mean(s, x0, xk, 9));
  EXPECT_EQ(stride_posterior_variance(s, 9, 8), s.posterior_variance(9));
  const Tensor to_zero = stride_posterior_mean(s, x0, xk, 5, 0);
  for (std::size_t i = 0; i < x0.size(); ++i) EXPECT_NEAR(to_zero[i], x0[i], 1e-12);
}

TEST(DiffusionGuidance, LinearExtrapolation) {
  const Tensor u = Tensor::from_data({1, 3}, {0.0, 1.0, -2.0});
  const Tensor c = Tensor::from_data({1, 3}, {1.0, 3.0, 2.0});
  EXPECT_EQ(cfg_combine(u, c, 0.0), u);
  EXPECT_EQ(cfg_combine(u, c, 1.0), c);
  const Tensor g = cfg_combine(u, c, 2.0);
  EXPECT_EQ(g[0], 2.0);
  EXPECT_EQ(g[1], 5.0);
  EXPECT_EQ(g[2], 6.0);
}

TEST(DiffusionSampler, LadderEndsAtZero) {
  EXPECT_EQ(step_ladder(32, 4), (std::vector<std::size_t>{32, 28, 24, 20, 16, 12, 8, 4}));
  EXPECT_EQ(step_ladder(10, 3), (std::vector<std::size_t>{10, 7, 4, 1}));
  EXPECT_EQ(step_ladder(5, 5), (std::vector<std::size_t>{5}));
  EXPECT_EQ(step_ladder(5, 9), (std::vector<std::size_t>{5}));
  EXPECT_EQ(step_ladder(3, 1), (std::vector<std::size_t>{3, 2, 1}));
}

TEST(DiffusionSampler, UnitStrideIsBitIdenticalToTheReference) {
  const NoiseSchedule s = make_scaled_schedule(16);
  SamplerConfig cfg;
  cfg.gamma = 1;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng hist_rng(seed + 50);
    const Tensor history = random_tensor(seed % 3, 3, hist_rng);
    Rng a(seed), b(seed);
    const SampleResult got = sample_reverse(toy_denoiser(), s, cfg, 6, 3, history, a);
    const Tensor ref = reference_sampler(toy_denoiser(), s, cfg, 6, 3, history, b);
    EXPECT_EQ(got.x0, ref);
    EXPECT_EQ(got.denoiser_evals, 32u);
    EXPECT_EQ(a.next_u64(), b.next_u64());
  }
}

TEST(DiffusionSampler, FullStrideIsOneGuidedPrediction) {
  const NoiseSchedule s = make_scaled_schedule(16);
  SamplerConfig cfg;
  cfg.gamma = 16;
  Rng a(7), b(7);
  const SampleResult got = sample_reverse(toy_denoiser(), s, cfg, 4, 2, Tensor(), a);
  Tensor xK(4, 2);
  for (std::size_t i = 0; i < xK.size(); ++i) xK[i] = b.normal();
  const auto den = toy_denoiser();
  const Tensor expect = cfg_combine(den(xK, 16, true), den(xK, 16, false), cfg.omega);
  for (std::size_t i = 0; i < expect.size(); ++i) EXPECT_NEAR(got.x0[i], expect[i], 1e-12);
  EXPECT_EQ(got.denoiser_evals, 2u);
}

TEST(DiffusionSampler, HistoryIsPreservedExactly) {
  const NoiseSchedule s = make_scaled_schedule(32);
  SamplerConfig cfg;
  for (std::size_t t = 0; t <= 8; ++t) {
    Rng hr(t);
    const Tensor history = random_tensor(t, 3, hr, 3.0);
    Rng rng(1000 + t);
    const Tensor x = sample_reverse(toy_denoiser(), s, cfg, 8, 3, history, rng).x0;
    for (std::size_t i = 0; i < t * 3; ++i) EXPECT_EQ(x[i], history[i]);
  }
}

TEST(DiffusionSampler, HistoryLongerThanHorizonIsShapeError) {
  const NoiseSchedule s = make_scaled_schedule(8);
  Rng rng(1);
  EXPECT_THROW(sample_reverse(toy_denoiser(), s, SamplerConfig{}, 4, 2, Tensor(5, 2), rng), ShapeError);
  EXPECT_THROW(sample_reverse(toy_denoiser(), s, SamplerConfig{}, 4, 2, Tensor(2, 3), rng), ShapeError);
}

TEST(DiffusionSampler, EvaluationCountLaw) {
  const NoiseSchedule s = make_scaled_schedule(32);
  std::size_t base = 0;
  for (std::size_t gamma : {1u, 2u, 4u, 8u, 16u}) {
    SamplerConfig cfg;
    cfg.gamma = gamma;
    std::size_t calls = 0;
    Rng rng(8);
    const SampleResult r = sample_reverse(toy_denoiser(&calls), s, cfg, 4, 2, Tensor(), rng);
    EXPECT_EQ(r.denoiser_evals, 2 * ((32 + gamma - 1) / gamma));
    EXPECT_EQ(calls, r.denoiser_evals);
    if (gamma == 1) base = calls;
    if (gamma == 4) EXPECT_EQ(4 * calls, base);
  }
  SamplerConfig odd;
  odd.gamma = 3;
  Rng rng(9);
  EXPECT_EQ(sample_reverse(toy_denoiser(), make_scaled_schedule(10), odd, 4, 2, Tensor(), rng).denoiser_evals, 8u);
}

TEST(DiffusionSampler, LowerTemperatureNeverIncreasesSpread) {
  const NoiseSchedule s = make_scaled_schedule(32);
  double previous = std::numeric_limits<double>::infinity();
  for (double temp : {1.0, 0.5, 0.25, 0.1, 0.01}) {
    SamplerConfig cfg;
    cfg.gamma = 1;
    cfg.temperature = temp;
    const std::size_t n = 200;
    Tensor sum(4, 2, 0.0), sq(4, 2, 0.0);
    for (std::uint64_t seed = 0; seed < n; ++seed) {
      Rng rng(seed);
      const Tensor x = sample_reverse(toy_denoiser(), s, cfg, 4, 2, Tensor(), rng).x0;
      for (std::size_t i = 0; i < x.size(); ++i) {
        sum[i] += x[i];
        sq[i] += x[i] * x[i];
      }
    }
    double var = 0.0;
    for (std::size_t i = 0; i < sum.size(); ++i) var += sq[i] / n - (sum[i] / n) * (sum[i] / n);
    EXPECT_LE(var, previous) << temp;
    previous = var;
  }
}

TEST(DiffusionSampler, InvalidConfigAndNonFiniteOutputAbort) {
  const NoiseSchedule s = make_scaled_schedule(8);
  Rng rng(1);
  SamplerConfig bad;
  bad.gamma = 0;
  EXPECT_THROW(sample_reverse(toy_denoiser(), s, bad, 2, 2, Tensor(), rng), ConfigError);
  bad = SamplerConfig{};
  bad.temperature = 0.0;
  EXPECT_THROW(sample_reverse(toy_denoiser(), s, bad, 2, 2, Tensor(), rng), ConfigError);
  bad = SamplerConfig{};
  bad.omega = -1.0;
  EXPECT_THROW(sample_reverse(toy_denoiser(), s, bad, 2, 2, Tensor(), rng), ConfigError);
  const Denoiser nan_den = [](const Tensor& x, std::size_t, bool) {
    Tensor o = x;
    o[0] = std::nan("");
    return o;
  };
  EXPECT_THROW(sample_reverse(nan_den, s, SamplerConfig{}, 2, 2, Tensor(), rng), NumericError);
}

TEST(DiffusionLoss, OracleAndZeroDenoisers) {
  const NoiseSchedule s = make_scaled_schedule(32);
  Rng data(10);
  std::vector<Tensor> batch;
  double sq = 0.0;
  std::size_t count = 0;
  for (int i = 0; i < 4; ++i) {
    batch.push_back(random_tensor(5, 3, data));
    for (double v : batch.back().data()) sq += v * v;
    count += 15;
  }
  Rng r1(11), r2(11);
  EXPECT_EQ(ddpm_loss(s, batch, [&](const Tensor&, std::size_t, std::size_t item) { return batch[item]; }, r1), 0.0);
  EXPECT_NEAR(ddpm_loss(s, batch, [](const Tensor& x, std::size_t, std::size_t) { return Tensor(x.shape(), 0.0); }, r2),
              sq / count, 1e-14);
}

TEST(DiffusionLoss, StepsAreUniformOverTheSchedule) {
  Rng rng(12);
  std::vector<std::size_t> hist(9, 0);
  for (int i = 0; i < 8000; ++i) {
    const std::size_t k = sample_step(8, rng);
    ASSERT_GE(k, 1u);
    ASSERT_LE(k, 8u);
    ++hist[k];
  }
  for (std::size_t k = 1; k <= 8; ++k) EXPECT_NEAR(hist[k], 1000.0, 4.0 * std::sqrt(1000.0 * 7.0 / 8.0));
}
