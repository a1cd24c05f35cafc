#include "egdp/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "egdp/diffusion.hpp"
#include "egdp/error.hpp"

namespace egdp {

using nlohmann::json;

DatasetMeta DatasetMeta::from(const data::Dataset& d) {
  return {d.stats, d.return_min, d.return_max, d.initial_coefficient};
}

TrainerState TrainerState::init(const TrainConfig& cfg, const data::Dataset& d) {
  cfg.validate();
  if (d.size() == 0) throw InputError("train: empty dataset");
  TrainerState st;
  st.cfg = cfg;
  st.cfg.model.horizon = d.horizon;
  st.cfg.model.state_dim = d.state_dim;
  st.cfg.model.use_cross_attention = !cfg.disable_cross_attn;
  st.meta = DatasetMeta::from(d);
  st.model = EgdpModel::create(st.cfg.model, cfg.seed);
  st.adam = Adam(AdamConfig{cfg.lr, 0.9, 0.999, 1e-8});
  st.rng = Rng(cfg.seed ^ 0x5EED5EED5EEDULL);
  return st;
}

namespace {

ad::Var build_loss(Graph& g, const EgdpModel& model, const TrainConfig& cfg, const data::Dataset& d, Rng& rng,
                   LossReport* report) {
  const std::size_t B = cfg.batch_size;
  const std::size_t T = d.horizon, D = d.state_dim;
  const std::size_t N = d.size();
  if (model.cfg.horizon != T || model.cfg.state_dim != D) throw ShapeError("train: model shape does not match dataset");
  const diffusion::NoiseSchedule sched = cfg.schedule();

  std::vector<std::size_t> items(B);
  for (auto& i : items) i = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(N) - 1));

  // Expert branch: L_exp and the blended implicit condition.
  Tensor x_expert(B, T * D);
  for (std::size_t b = 0; b < B; ++b) {
    const Tensor& e = d.expert_states[d.expert_of[items[b]]];
    std::copy(e.ptr(), e.ptr() + e.size(), x_expert.ptr() + b * T * D);
  }
  Tensor eps_z(B, model.cfg.latent_dim);
  for (std::size_t i = 0; i < eps_z.size(); ++i) eps_z[i] = rng.normal();
  vae::BlendConfig blend_cfg{cfg.delta};
  if (cfg.disable_blend) blend_cfg.delta = 1.0;
  const vae::ExpertBranch branch = vae::expert_branch(g, model.vae, x_expert, eps_z, blend_cfg, rng);

  // Denoising targets with history overwrite.
  Tensor x0(B * T, D), xk(B * T, D), explicit_cond(B, egcd::kExplicitDim);
  egcd::DenoiserInput in;
  in.k.resize(B);
  in.dropped.resize(B);
  in.history_len.resize(B);
  for (std::size_t b = 0; b < B; ++b) {
    const std::size_t i = items[b];
    const Tensor& s = d.states[i];
    std::copy(s.ptr(), s.ptr() + s.size(), x0.ptr() + b * T * D);
    explicit_cond(b, 0) = d.f_return[i];
    explicit_cond(b, 1) = d.f_constraint[i];
    // Known rows s_1..s_t with t in [0, T-1]: s_0 is never a trajectory row,
    // so t = 0 is the first serving step.
    const std::size_t t = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(T) - 1));
    const std::size_t k = diffusion::sample_step(sched.K, rng);
    in.dropped[b] = rng.bernoulli(cfg.p_uncond) ? 1 : 0;
    Tensor eps(T, D);
    for (std::size_t j = 0; j < eps.size(); ++j) eps[j] = rng.normal();
    const Tensor noisy = diffusion::q_sample(sched, s, k, eps);
    std::copy(noisy.ptr(), noisy.ptr() + noisy.size(), xk.ptr() + b * T * D);
    for (std::size_t j = 0; j < t * D; ++j) xk[b * T * D + j] = s[j];
    in.k[b] = k;
    in.history_len[b] = t;
  }
  in.x_k = g.constant(std::move(xk));
  in.expert = ad::reshape(branch.blended, B * T, D);
  in.explicit_cond = std::move(explicit_cond);
  in.history = x0;
  const ad::Var x0_var = g.constant(std::move(x0));
  const ad::Var pred = model.net.forward(g, in);
  const ad::Var l_ddpm = ad::mse(pred, x0_var);

  // Inverse dynamics on independently drawn (episode, t) pairs.
  const std::size_t h = model.cfg.inv_history;
  const std::size_t B_inv = cfg.inv_batch_size;
  Tensor inv_in(B_inv, model.inv.cfg.input_dim());
  Tensor actions(B_inv, 1);
  for (std::size_t b = 0; b < B_inv; ++b) {
    const std::size_t i = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(N) - 1));
    const std::size_t t = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(T) - 1));
    const Tensor& full = d.full_states[i];
    const Tensor win = invdyn::window(full, t, h);
    Tensor next(1, D);
    for (std::size_t j = 0; j < D; ++j) next[j] = full(t + 1, j);
    const auto row = invdyn::flatten_input(win, next);
    std::copy(row.begin(), row.end(), inv_in.ptr() + b * row.size());
    actions[b] = d.episodes[i].steps[t].action;
  }
  const ad::Var l_inv = invdyn::inv_loss(g, model.inv, inv_in, actions);

  const ad::Var aux = ad::add(branch.loss, l_inv);
  const ad::Var total = ad::add(l_ddpm, ad::scale(aux, cfg.xi));
  if (report) {
    report->ddpm = l_ddpm.value()[0];
    report->exp = branch.loss.value()[0];
    report->inv = l_inv.value()[0];
    report->total = total.value()[0];
  }
  return total;
}

}  // namespace

ad::Var total_loss_graph(Graph& g, const EgdpModel& model, const TrainConfig& cfg, const data::Dataset& d,
                         std::uint64_t seed, LossReport* report) {
  Rng rng(seed);
  return build_loss(g, model, cfg, d, rng, report);
}

LossReport train_step(TrainerState& st, const data::Dataset& d) {
  LossReport rep;
  {
    ad::Tape tape;
    Graph g(tape, st.model.params);
    const ad::Var loss = build_loss(g, st.model, st.cfg, d, st.rng, &rep);
    if (!std::isfinite(rep.total) || !std::isfinite(rep.ddpm) || !std::isfinite(rep.exp) || !std::isfinite(rep.inv)) {
      throw NumericError("train: non-finite loss at step " + std::to_string(st.step + 1) +
                         " (L_ddpm=" + std::to_string(rep.ddpm) + ", L_exp=" + std::to_string(rep.exp) +
                         ", L_inv=" + std::to_string(rep.inv) + ")");
    }
    tape.backward(loss);
  }
  st.adam.step(st.model.params);
  ++st.step;
  st.history.push_back(rep);
  return rep;
}

std::string loss_csv(const std::vector<LossReport>& history) {
  std::string out = "step,L_ddpm,L_exp,L_inv,L_total\n";
  char buf[256];
  for (std::size_t i = 0; i < history.size(); ++i) {
    const auto& r = history[i];
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g\n", i + 1, r.ddpm, r.exp, r.inv, r.total);
    out += buf;
  }
  return out;
}

namespace {

bool plateaued(const std::vector<LossReport>& h, std::size_t total_steps, double tol) {
  const std::size_t w = std::max<std::size_t>(1, total_steps / 5);
  if (h.size() < 2 * w) return false;
  double recent = 0.0, previous = 0.0;
  for (std::size_t i = h.size() - w; i < h.size(); ++i) recent += h[i].total;
  for (std::size_t i = h.size() - 2 * w; i < h.size() - w; ++i) previous += h[i].total;
  return recent >= previous * (1.0 - tol);
}

}  // namespace

TrainResult train(TrainerState state, const data::Dataset& d, const TrainOutputs& out) {
  TrainResult res;
  const auto save = [&](const TrainerState& st) {
    if (out.dir.empty()) return;
    const auto ck = out.dir / out.checkpoint_name;
    const auto csv = out.dir / out.loss_name;
    save_checkpoint(ck, to_checkpoint(st));
    write_file_atomic(csv, loss_csv(st.history));
    for (const auto& p : {ck, csv}) {
      if (std::find(res.files.begin(), res.files.end(), p) == res.files.end()) res.files.push_back(p);
    }
  };

  while (state.step < state.cfg.steps) {
    train_step(state, d);
    if (state.step % state.cfg.checkpoint_every == 0 && state.step < state.cfg.steps) save(state);
    if (state.cfg.early_stop && plateaued(state.history, state.cfg.steps, state.cfg.plateau_tolerance)) {
      res.early_stopped = true;
      break;
    }
  }
  save(state);
  res.state = std::move(state);
  return res;
}

TrainResult train(const TrainConfig& cfg, const data::Dataset& d, const TrainOutputs& out) {
  return train(TrainerState::init(cfg, d), d, out);
}

Checkpoint to_checkpoint(const TrainerState& st) {
  Checkpoint ck;
  const auto& a = st.adam.config();
  ck.meta = {{"kind", "egdp-model"},
             {"model", to_json(st.model.cfg)},
             {"train", to_json(st.cfg)},
             {"schedule",
              {{"K", st.cfg.K},
               {"beta_start", st.cfg.beta_start},
               {"beta_end", st.cfg.beta_end},
               {"scaled", st.cfg.scaled_schedule}}},
             {"ablation",
              {{"disable_blend", st.cfg.disable_blend},
               {"disable_cross_attn", st.cfg.disable_cross_attn},
               {"force_gamma_1", st.cfg.force_gamma_1}}},
             {"rng_state", st.rng.state()},
             {"step", st.step},
             {"adam", {{"step", st.adam.step_count()}, {"lr", a.lr}, {"beta1", a.beta1}, {"beta2", a.beta2}, {"eps", a.eps}}},
             {"norm", {{"min", st.meta.stats.min}, {"max", st.meta.stats.max}}},
             {"return_min", st.meta.return_min},
             {"return_max", st.meta.return_max},
             {"initial_coefficient", st.meta.initial_coefficient}};
  for (const auto& p : st.model.params) ck.tensors.emplace_back(p.name, p.value);
  for (const auto& [name, m] : st.adam.first_moments()) ck.tensors.emplace_back("adam/m/" + name, m);
  for (const auto& [name, v] : st.adam.second_moments()) ck.tensors.emplace_back("adam/v/" + name, v);
  Tensor hist(st.history.size(), 4);
  for (std::size_t i = 0; i < st.history.size(); ++i) {
    hist(i, 0) = st.history[i].ddpm;
    hist(i, 1) = st.history[i].exp;
    hist(i, 2) = st.history[i].inv;
    hist(i, 3) = st.history[i].total;
  }
  ck.tensors.emplace_back("train/loss_history", std::move(hist));
  return ck;
}

TrainerState from_checkpoint(const Checkpoint& ck) {
  try {
    if (ck.meta.value("kind", "") != "egdp-model") throw LoadError("checkpoint: not an EGDP model checkpoint", 0);
    TrainerState st;
    st.cfg = train_from_json(ck.meta.at("train"), TrainConfig{});
    const ModelConfig mc = model_from_json(ck.meta.at("model"), ModelConfig{});
    st.cfg.model = mc;
    st.model = EgdpModel::create(mc, st.cfg.seed);
    for (auto& p : st.model.params) {
      const Tensor& t = ck.tensor(p.name);
      if (t.shape() != p.value.shape()) {
        throw LoadError("checkpoint: tensor '" + p.name + "' has shape " + t.shape_str() + ", model expects " +
                            p.value.shape_str(),
                        0);
      }
      p.value = t;
    }
    const auto& a = ck.meta.at("adam");
    st.adam = Adam(AdamConfig{a.at("lr").get<double>(), a.at("beta1").get<double>(), a.at("beta2").get<double>(),
                              a.at("eps").get<double>()});
    std::map<std::string, Tensor> m, v;
    for (const auto& [name, t] : ck.tensors) {
      if (name.rfind("adam/m/", 0) == 0) m[name.substr(7)] = t;
      if (name.rfind("adam/v/", 0) == 0) v[name.substr(7)] = t;
    }
    st.adam.restore(a.at("step").get<std::size_t>(), std::move(m), std::move(v));
    st.rng.restore(ck.meta.at("rng_state").get<std::string>());
    st.step = ck.meta.at("step").get<std::size_t>();
    st.meta.stats.min = ck.meta.at("norm").at("min").get<std::vector<double>>();
    st.meta.stats.max = ck.meta.at("norm").at("max").get<std::vector<double>>();
    st.meta.return_min = ck.meta.at("return_min").get<double>();
    st.meta.return_max = ck.meta.at("return_max").get<double>();
    st.meta.initial_coefficient = ck.meta.at("initial_coefficient").get<double>();
    const Tensor& hist = ck.tensor("train/loss_history");
    for (std::size_t i = 0; i < hist.rows() && hist.cols() == 4; ++i) {
      st.history.push_back({hist(i, 0), hist(i, 1), hist(i, 2), hist(i, 3)});
    }
    return st;
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("checkpoint: malformed metadata (") + e.what() + ")", 0);
  }
}

}  // namespace egdp
