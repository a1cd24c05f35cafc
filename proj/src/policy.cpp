#include "egdp/policy.hpp"

#include <cmath>

#include "egdp/error.hpp"

namespace egdp::eval {

using auction::StepState;

PolicyKind parse_policy_kind(const std::string& name) {
  if (name == "egdp") return PolicyKind::kEgdp;
  if (name == "fixed_bid") return PolicyKind::kFixedBid;
  if (name == "pid") return PolicyKind::kPid;
  if (name == "behavior_clone") return PolicyKind::kBehaviorClone;
  if (name == "expert_oracle") return PolicyKind::kExpertOracle;
  throw ConfigError("policy: unknown kind '" + name + "'");
}

std::string policy_name(PolicyKind kind) {
  switch (kind) {
    case PolicyKind::kEgdp: return "egdp";
    case PolicyKind::kFixedBid: return "fixed_bid";
    case PolicyKind::kPid: return "pid";
    case PolicyKind::kBehaviorClone: return "behavior_clone";
    case PolicyKind::kExpertOracle: return "expert_oracle";
  }
  return "unknown";
}

namespace {

Tensor raw_states(const std::vector<StepState>& states) {
  Tensor out(states.size(), StepState::kDim);
  for (std::size_t r = 0; r < states.size(); ++r) {
    const auto a = states[r].to_array();
    for (std::size_t j = 0; j < a.size(); ++j) out(r, j) = a[j];
  }
  return out;
}

// Inference tapes never record gradients, so the store is only read.
ParamStore& readonly(const ParamStore& p) { return const_cast<ParamStore&>(p); }

}  // namespace

double PidPolicy::act(const std::vector<StepState>& states) {
  if (states.empty()) throw InputError("pid: no state");
  const StepState& s = states.back();
  const double error = (1.0 - s.remaining_budget_frac) - s.time_frac;
  integral_ += error;
  const double derivative = states.size() > 1 ? error - previous_error_ : 0.0;
  previous_error_ = error;
  const double u = gains_.kp * error + gains_.ki * integral_ + gains_.kd * derivative;
  const double next = initial_ * std::exp(-u);
  return next - s.bid_coefficient;
}

BcModel BcModel::create(std::size_t history, std::size_t hidden, const data::Dataset& d, std::uint64_t seed) {
  BcModel m;
  m.history = history;
  m.state_dim = d.state_dim;
  m.stats = d.stats;
  m.initial_coefficient = d.initial_coefficient;
  Rng rng(seed);
  m.mlp = Mlp2::create(m.params, "bc/mlp", (history + 1) * d.state_dim, hidden, 1, rng);
  return m;
}

double BcModel::predict(const Tensor& normalized_window) {
  Tensor in = normalized_window;
  in.reshape({1, normalized_window.size()});
  ad::Tape tape(false);
  Graph g(tape, params);
  return mlp(g, g.constant(std::move(in))).value()[0];
}

BcModel train_bc(const data::Dataset& d, std::size_t steps, std::size_t hidden, std::size_t history,
                 std::uint64_t seed, std::vector<double>* losses) {
  if (d.size() == 0) throw InputError("train_bc: empty dataset");
  BcModel m = BcModel::create(history, hidden, d, seed);
  Adam adam;
  Rng rng(seed ^ 0xBCBCBCBCULL);
  const std::size_t B = 64, T = d.horizon, D = d.state_dim;
  const std::size_t width = (history + 1) * D;
  for (std::size_t s = 0; s < steps; ++s) {
    Tensor in(B, width), target(B, 1);
    for (std::size_t b = 0; b < B; ++b) {
      const std::size_t i = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(d.size()) - 1));
      const std::size_t t = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(T) - 1));
      const Tensor win = invdyn::window(d.full_states[i], t, history);
      std::copy(win.ptr(), win.ptr() + width, in.ptr() + b * width);
      target[b] = d.episodes[i].steps[t].action;
    }
    ad::Tape tape;
    Graph g(tape, m.params);
    const ad::Var loss = ad::mse(m.mlp(g, g.constant(std::move(in))), g.constant(std::move(target)));
    if (losses) losses->push_back(loss.value()[0]);
    tape.backward(loss);
    adam.step(m.params);
  }
  return m;
}

Checkpoint bc_to_checkpoint(const BcModel& m) {
  Checkpoint ck;
  ck.meta = {{"kind", "bc-model"},
             {"history", m.history},
             {"state_dim", m.state_dim},
             {"hidden", m.mlp.first.out},
             {"norm", {{"min", m.stats.min}, {"max", m.stats.max}}},
             {"initial_coefficient", m.initial_coefficient}};
  for (const auto& p : m.params) ck.tensors.emplace_back(p.name, p.value);
  return ck;
}

BcModel bc_from_checkpoint(const Checkpoint& ck) {
  try {
    if (ck.meta.value("kind", "") != "bc-model") throw LoadError("checkpoint: not a behavior-cloning checkpoint", 0);
    BcModel m;
    m.history = ck.meta.at("history").get<std::size_t>();
    m.state_dim = ck.meta.at("state_dim").get<std::size_t>();
    m.stats.min = ck.meta.at("norm").at("min").get<std::vector<double>>();
    m.stats.max = ck.meta.at("norm").at("max").get<std::vector<double>>();
    m.initial_coefficient = ck.meta.at("initial_coefficient").get<double>();
    Rng rng(0);
    m.mlp = Mlp2::create(m.params, "bc/mlp", (m.history + 1) * m.state_dim, ck.meta.at("hidden").get<std::size_t>(), 1,
                         rng);
    for (auto& p : m.params) {
      const Tensor& t = ck.tensor(p.name);
      if (t.shape() != p.value.shape()) throw LoadError("checkpoint: tensor '" + p.name + "' has the wrong shape", 0);
      p.value = t;
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("checkpoint: malformed metadata (") + e.what() + ")", 0);
  }
}

double BcPolicy::act(const std::vector<StepState>& states) {
  if (states.empty()) throw InputError("behavior_clone: no state");
  const Tensor norm = model_->stats.normalize(raw_states(states));
  return model_->predict(invdyn::window(norm, states.size() - 1, model_->history));
}

diffusion::SamplerConfig effective_sampler(const TrainerState& model, diffusion::SamplerConfig cfg) {
  if (model.cfg.force_gamma_1) cfg.gamma = 1;
  return cfg;
}

double plan_step(const TrainerState& m, const std::vector<StepState>& states, const PlanTarget& target,
                 const diffusion::SamplerConfig& sampler, Rng& rng, PlanInfo* info) {
  const std::size_t T = m.model.cfg.horizon;
  const std::size_t D = m.model.cfg.state_dim;
  if (states.empty()) throw InputError("plan_step: history must contain s_0");
  const std::size_t t = states.size() - 1;
  if (t >= T) throw InputError("plan_step: t = " + std::to_string(t) + " is past the last decision step");
  if (D != StepState::kDim) throw ShapeError("plan_step: model state width differs from the environment state");
  ParamStore& params = readonly(m.model.params);

  const Tensor norm = m.meta.stats.normalize(raw_states(states));
  Tensor history(t, D);
  std::copy(norm.ptr() + D, norm.ptr() + norm.size(), history.ptr());
  Tensor history_full(T, D, 0.0);
  std::copy(history.ptr(), history.ptr() + history.size(), history_full.ptr());

  // Pseudo-expert from the prior; the blend ablation conditions on zeros.
  Tensor expert(T, D, 0.0);
  if (!m.cfg.disable_blend) {
    Tensor z(1, m.model.cfg.latent_dim);
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = rng.normal();
    expert = vae::decode(m.model.vae, params, z);
    expert.reshape({T, D});
  }
  Tensor explicit_cond(1, egcd::kExplicitDim);
  explicit_cond[0] = target.ret;
  explicit_cond[1] = target.constraint;

  const diffusion::Denoiser denoiser = [&](const Tensor& x_k, std::size_t k, bool dropped) {
    return m.model.net.predict(params, x_k, k, expert, explicit_cond, dropped, history_full, t);
  };
  const diffusion::NoiseSchedule sched = m.cfg.schedule();
  diffusion::SampleResult res =
      diffusion::sample_reverse(denoiser, sched, effective_sampler(m, sampler), T, D, history, rng);

  Tensor next(1, D);
  for (std::size_t j = 0; j < D; ++j) next[j] = res.x0(t, j);
  const Tensor win = invdyn::window(norm, t, m.model.cfg.inv_history);
  const double action = m.model.inv.predict(params, win, next);
  if (!std::isfinite(action)) throw NumericError("plan_step: non-finite action at t = " + std::to_string(t));
  if (info) {
    info->trajectory = std::move(res.x0);
    info->next_state = next;
    info->denoiser_evals = res.denoiser_evals;
  }
  return action;
}

EgdpPolicy::EgdpPolicy(std::shared_ptr<const TrainerState> model, diffusion::SamplerConfig sampler, PlanTarget target,
                       std::size_t plan_every, std::uint64_t episode_seed)
    : model_(std::move(model)),
      sampler_(sampler),
      target_(target),
      plan_every_(plan_every == 0 ? 1 : plan_every),
      rng_(hash_coords(sampler.seed, episode_seed, 0xE6D9)) {}

double EgdpPolicy::act(const std::vector<StepState>& states) {
  const std::size_t t = states.size() - 1;
  if (plan_.empty() || t % plan_every_ == 0) {
    PlanInfo info;
    const double a = plan_step(*model_, states, target_, sampler_, rng_, &info);
    evals_ += info.denoiser_evals;
    plan_ = std::move(info.trajectory);
    return a;
  }
  // Between planning calls the cached plan supplies s'_{t+1}.
  const std::size_t D = model_->model.cfg.state_dim;
  const Tensor norm = model_->meta.stats.normalize(raw_states(states));
  Tensor next(1, D);
  for (std::size_t j = 0; j < D; ++j) next[j] = plan_(t, j);
  return model_->model.inv.predict(readonly(model_->model.params),
                                   invdyn::window(norm, t, model_->model.cfg.inv_history), next);
}

}  // namespace egdp::eval
