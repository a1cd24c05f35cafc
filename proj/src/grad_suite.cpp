#include "egdp/grad_suite.hpp"

#include <chrono>

#include "egdp/config.hpp"
#include "egdp/dataset.hpp"
#include "egdp/diffusion.hpp"
#include "egdp/model.hpp"
#include "egdp/trainer.hpp"

namespace egdp {

namespace {

Tensor random_tensor(std::size_t rows, std::size_t cols, Rng& rng, double scale = 1.0) {
  Tensor t(rows, cols);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = scale * rng.normal();
  return t;
}

void nudge(ParamStore& params, Rng& rng) {
  for (auto& p : params) {
    for (std::size_t i = 0; i < p.value.size(); ++i) p.value[i] += 0.1 * rng.normal();
  }
}

// Normalized synthetic data of the requested width; only the fields the
// training loss reads are filled.
data::Dataset synthetic_dataset(std::size_t T, std::size_t D, std::size_t n, Rng& rng) {
  data::Dataset d;
  d.horizon = T;
  d.state_dim = D;
  for (std::size_t i = 0; i < n; ++i) {
    Tensor full(T + 1, D);
    for (std::size_t j = 0; j < full.size(); ++j) full[j] = rng.uniform(-1.0, 1.0);
    Tensor states(T, D);
    std::copy(full.ptr() + D, full.ptr() + full.size(), states.ptr());
    Tensor expert(T, D);
    for (std::size_t j = 0; j < expert.size(); ++j) expert[j] = rng.uniform(-0.9, 0.9);
    auction::EpisodeRecord ep;
    for (std::size_t t = 0; t < T; ++t) ep.steps.push_back({t, {}, rng.normal() * 0.1, 0.0, 0.0, 0});
    d.episodes.push_back(ep);
    d.expert_of.push_back(i);
    d.full_states.push_back(full);
    d.states.push_back(states);
    d.expert_states.push_back(expert);
    d.f_return.push_back(rng.uniform());
    d.f_constraint.push_back(rng.uniform());
  }
  return d;
}

template <typename F>
ComponentCheck timed(const std::string& name, F&& f) {
  const auto start = std::chrono::steady_clock::now();
  ComponentCheck c{name, f(), 0.0};
  c.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return c;
}

ComponentCheck check_egcd(const GradSuiteConfig& cfg, bool cross_attention, const std::string& name) {
  Rng rng(cfg.seed);
  egcd::EgcdConfig ec;
  ec.horizon = cfg.horizon;
  ec.state_dim = cfg.state_dim;
  ec.model_dim = cfg.model_dim;
  ec.heads = cfg.heads;
  ec.ffn_mult = 2;
  ec.step_embed_dim = 8;
  ec.position_embed_dim = 8;
  ec.use_cross_attention = cross_attention;
  ParamStore params;
  const egcd::Egcd net = egcd::Egcd::create(params, ec, rng);
  nudge(params, rng);
  const std::size_t B = cfg.batch, T = cfg.horizon, D = cfg.state_dim;
  const Tensor xk = random_tensor(B * T, D, rng);
  const Tensor expert = random_tensor(B * T, D, rng, 0.5);
  const Tensor history = random_tensor(B * T, D, rng, 0.5);
  const Tensor explicit_cond = random_tensor(B, egcd::kExplicitDim, rng, 0.5);
  std::vector<std::size_t> ks, lens;
  std::vector<std::uint8_t> dropped;
  for (std::size_t b = 0; b < B; ++b) {
    ks.push_back(1 + b * 3);
    lens.push_back(b % T);
    dropped.push_back(b % 2 ? 1 : 0);
  }
  return timed(name, [&] {
    return check_gradients(
        params,
        [&](ad::Tape& tape) {
          Graph g(tape, params);
          egcd::DenoiserInput in;
          in.x_k = g.constant(xk);
          in.k = ks;
          in.expert = g.constant(expert);
          in.explicit_cond = explicit_cond;
          in.dropped = dropped;
          in.history = history;
          in.history_len = lens;
          const ad::Var out = net.forward(g, in);
          return ad::mse(out, g.constant(history));
        },
        cfg.options);
  });
}

ComponentCheck check_vae(const GradSuiteConfig& cfg) {
  Rng rng(cfg.seed + 1);
  ParamStore params;
  const vae::Vae v = vae::Vae::create(params, {cfg.horizon, cfg.state_dim, cfg.latent_dim}, rng);
  nudge(params, rng);
  const std::size_t B = cfg.batch;
  Tensor x(B, cfg.horizon * cfg.state_dim);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = rng.uniform(-0.9, 0.9);
  const Tensor eps = random_tensor(B, cfg.latent_dim, rng);
  return timed("vae", [&] {
    return check_gradients(
        params,
        [&](ad::Tape& tape) {
          Graph g(tape, params);
          Rng blend_rng(cfg.seed);
          return vae::expert_branch(g, v, x, eps, {0.0}, blend_rng).loss;
        },
        cfg.options);
  });
}

ComponentCheck check_inverse_dynamics(const GradSuiteConfig& cfg) {
  Rng rng(cfg.seed + 2);
  ParamStore params;
  invdyn::InvDynConfig ic;
  ic.history = 2;
  ic.hidden = cfg.model_dim;
  ic.state_dim = cfg.state_dim;
  const invdyn::InverseDynamics net = invdyn::InverseDynamics::create(params, ic, rng);
  nudge(params, rng);
  const Tensor inputs = random_tensor(cfg.batch * 2, ic.input_dim(), rng, 0.5);
  const Tensor actions = random_tensor(cfg.batch * 2, 1, rng, 0.2);
  return timed("inverse_dynamics", [&] {
    return check_gradients(
        params,
        [&](ad::Tape& tape) {
          Graph g(tape, params);
          return invdyn::inv_loss(g, net, inputs, actions);
        },
        cfg.options);
  });
}

ComponentCheck check_total_loss(const GradSuiteConfig& cfg) {
  Rng rng(cfg.seed + 3);
  const data::Dataset d = synthetic_dataset(cfg.horizon, cfg.state_dim, 3, rng);
  TrainConfig tc;
  tc.K = 10;
  tc.batch_size = cfg.batch;
  tc.inv_batch_size = cfg.batch;
  tc.delta = 0.5;
  tc.p_uncond = 0.3;
  tc.xi = 0.7;
  tc.model.horizon = cfg.horizon;
  tc.model.state_dim = cfg.state_dim;
  tc.model.model_dim = cfg.model_dim;
  tc.model.heads = cfg.heads;
  tc.model.ffn_mult = 2;
  tc.model.latent_dim = cfg.latent_dim;
  tc.model.inv_history = 2;
  tc.model.inv_hidden = cfg.model_dim;
  EgdpModel model = EgdpModel::create(tc.model, cfg.seed);
  nudge(model.params, rng);
  return timed("total_loss", [&] {
    return check_gradients(
        model.params,
        [&](ad::Tape& tape) {
          Graph g(tape, model.params);
          return total_loss_graph(g, model, tc, d, cfg.seed);
        },
        cfg.options);
  });
}

}  // namespace

std::vector<ComponentCheck> run_gradient_suite(const GradSuiteConfig& cfg) {
  std::vector<ComponentCheck> out;
  out.push_back(check_egcd(cfg, true, "egcd_block"));
  out.push_back(check_egcd(cfg, false, "egcd_block_no_cross_attention"));
  out.push_back(check_vae(cfg));
  out.push_back(check_inverse_dynamics(cfg));
  out.push_back(check_total_loss(cfg));
  return out;
}

}  // namespace egdp
