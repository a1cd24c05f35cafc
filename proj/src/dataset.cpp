#include "egdp/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "egdp/error.hpp"
#include "egdp/rng.hpp"

namespace egdp::data {

using auction::EpisodeRecord;
using auction::StepState;

NormStats NormStats::fit(const std::vector<const Tensor*>& blocks) {
  if (blocks.empty()) throw InputError("NormStats::fit: no data");
  const std::size_t D = blocks.front()->cols();
  NormStats s;
  s.min.assign(D, std::numeric_limits<double>::infinity());
  s.max.assign(D, -std::numeric_limits<double>::infinity());
  for (const Tensor* b : blocks) {
    if (b->cols() != D) throw ShapeError("NormStats::fit: inconsistent feature count");
    for (std::size_t r = 0; r < b->rows(); ++r) {
      for (std::size_t j = 0; j < D; ++j) {
        s.min[j] = std::min(s.min[j], (*b)(r, j));
        s.max[j] = std::max(s.max[j], (*b)(r, j));
      }
    }
  }
  return s;
}

double NormStats::normalize(std::size_t j, double x) const {
  const double range = max[j] - min[j];
  if (!(range > 0.0)) return 0.0;
  return 2.0 * (x - min[j]) / range - 1.0;
}

double NormStats::denormalize(std::size_t j, double y) const {
  const double range = max[j] - min[j];
  if (!(range > 0.0)) return min[j];
  return (y + 1.0) * 0.5 * range + min[j];
}

Tensor NormStats::normalize(const Tensor& x) const {
  if (x.cols() != min.size()) throw ShapeError("normalize: expected " + std::to_string(min.size()) + " features");
  Tensor out = x;
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t j = 0; j < x.cols(); ++j) out(r, j) = normalize(j, x(r, j));
  return out;
}

Tensor NormStats::denormalize(const Tensor& y) const {
  if (y.cols() != min.size()) throw ShapeError("denormalize: expected " + std::to_string(min.size()) + " features");
  Tensor out = y;
  for (std::size_t r = 0; r < y.rows(); ++r)
    for (std::size_t j = 0; j < y.cols(); ++j) out(r, j) = denormalize(j, y(r, j));
  return out;
}

double return_label(double ret, double ret_min, double ret_max) {
  const double range = ret_max - ret_min;
  if (!(range > 0.0)) return 0.5;
  return (ret - ret_min) / range;
}

double constraint_label(double target_cpa, double cost, double conversions) {
  if (!(target_cpa > 0.0)) throw InputError("constraint_label: target CPA must be > 0");
  if (conversions <= 0.0) return 0.0;
  const double realized = cost / conversions;
  if (realized <= target_cpa) return 1.0;
  return std::min(target_cpa / realized, 1.0);
}

Tensor states_of(const EpisodeRecord& ep) {
  Tensor out(ep.steps.size(), StepState::kDim);
  for (std::size_t t = 0; t < ep.steps.size(); ++t) {
    const auto a = ep.steps[t].state.to_array();
    for (std::size_t j = 0; j < a.size(); ++j) out(t, j) = a[j];
  }
  return out;
}

Tensor states_with_initial(const EpisodeRecord& ep) {
  Tensor out(ep.steps.size() + 1, StepState::kDim);
  const auto a0 = ep.initial_state.to_array();
  for (std::size_t j = 0; j < a0.size(); ++j) out(0, j) = a0[j];
  for (std::size_t t = 0; t < ep.steps.size(); ++t) {
    const auto a = ep.steps[t].state.to_array();
    for (std::size_t j = 0; j < a.size(); ++j) out(t + 1, j) = a[j];
  }
  return out;
}

Dataset build_dataset(std::vector<EpisodeRecord> episodes, std::vector<std::size_t> expert_of,
                      std::vector<EpisodeRecord> experts) {
  if (episodes.empty()) throw InputError("build_dataset: no logged trajectories");
  if (experts.empty()) throw InputError("build_dataset: no expert trajectories");
  if (expert_of.size() != episodes.size()) throw InputError("build_dataset: expert_of must pair every episode");
  const std::size_t T = episodes.front().steps.size();
  if (T == 0) throw InputError("build_dataset: empty episode");
  for (const auto& ep : episodes) {
    if (ep.steps.size() != T) throw InputError("build_dataset: episodes differ in length");
  }
  for (const auto& ep : experts) {
    if (ep.steps.size() != T) throw InputError("build_dataset: expert length differs from episodes");
  }
  for (std::size_t e : expert_of) {
    if (e >= experts.size()) throw InputError("build_dataset: expert index out of range");
  }

  Dataset d;
  d.horizon = T;
  std::vector<Tensor> raw_full, raw_expert;
  for (const auto& ep : episodes) raw_full.push_back(states_with_initial(ep));
  for (const auto& ep : experts) raw_expert.push_back(states_of(ep));
  std::vector<const Tensor*> blocks;
  for (const auto& t : raw_full) blocks.push_back(&t);
  for (const auto& t : raw_expert) blocks.push_back(&t);
  d.stats = NormStats::fit(blocks);

  d.return_min = std::numeric_limits<double>::infinity();
  d.return_max = -std::numeric_limits<double>::infinity();
  for (const auto& ep : episodes) {
    const double r = ep.total_reward();
    d.returns.push_back(r);
    d.return_min = std::min(d.return_min, r);
    d.return_max = std::max(d.return_max, r);
  }
  for (std::size_t i = 0; i < episodes.size(); ++i) {
    const auto& ep = episodes[i];
    d.f_return.push_back(return_label(d.returns[i], d.return_min, d.return_max));
    d.f_constraint.push_back(constraint_label(ep.target_cpa, ep.total_cost(), ep.total_reward()));
    Tensor full = d.stats.normalize(raw_full[i]);
    Tensor post(T, d.state_dim);
    std::copy(full.ptr() + d.state_dim, full.ptr() + full.size(), post.ptr());
    d.full_states.push_back(std::move(full));
    d.states.push_back(std::move(post));
  }
  double coef_sum = 0.0;
  for (std::size_t i = 0; i < experts.size(); ++i) {
    d.expert_states.push_back(d.stats.normalize(raw_expert[i]));
    coef_sum += experts[i].initial_state.bid_coefficient;
  }
  d.initial_coefficient = coef_sum / static_cast<double>(experts.size());
  d.episodes = std::move(episodes);
  d.expert_of = std::move(expert_of);
  d.experts = std::move(experts);
  return d;
}

void DataGenConfig::validate() const {
  if (num_seeds == 0) throw ConfigError("train.data_seeds: must be >= 1");
  if (episodes_per_seed == 0) throw ConfigError("train.episodes_per_seed: must be >= 1");
  if (!(noisy_expert_fraction >= 0.0 && noisy_expert_fraction <= 1.0)) {
    throw ConfigError("train.noisy_expert_fraction: must lie in [0, 1]");
  }
  if (!(coef_min > 0.0 && coef_max >= coef_min)) throw ConfigError("train.coef_min: need 0 < coef_min <= coef_max");
  if (!(walk_sigma >= 0.0)) throw ConfigError("train.walk_sigma: must be >= 0");
  if (!(walk_reversion >= 0.0 && walk_reversion <= 1.0)) {
    throw ConfigError("train.walk_reversion: must lie in [0, 1]");
  }
  if (!(noise_scale_max >= 0.0)) throw ConfigError("train.noise_scale_max: must be >= 0");
}

EpisodeRecord play_coefficients(const auction::EnvConfig& env_cfg, double initial_coefficient,
                                const std::vector<double>& coefficients) {
  if (coefficients.size() != env_cfg.num_steps) throw InputError("play_coefficients: need one coefficient per step");
  auction::AuctionEnv env(env_cfg);
  auto coefs = auction::competitor_coefficients(env_cfg);
  EpisodeRecord ep;
  ep.budget = env_cfg.budgets.at(0);
  ep.target_cpa = env_cfg.target_cpas.at(0);
  ep.initial_state = env.initial_state(0, initial_coefficient);
  double prev = initial_coefficient;
  for (std::size_t t = 0; t < coefficients.size(); ++t) {
    coefs[0] = std::max(coefficients[t], 0.0);
    const auto res = env.step(coefs);
    const auto& me = res.agents[0];
    ep.steps.push_back({t, me.state, coefs[0] - prev, me.reward, me.cost, me.wins});
    prev = coefs[0];
  }
  return ep;
}

GeneratedData generate(const auction::EnvConfig& env, const DataGenConfig& cfg,
                       const expert::DualSolverOptions& solver) {
  cfg.validate();
  env.validate();
  GeneratedData out;
  Rng rng(cfg.seed);
  const double log_lo = std::log(cfg.coef_min), log_hi = std::log(cfg.coef_max);
  for (std::size_t s = 0; s < cfg.num_seeds; ++s) {
    auction::EnvConfig e = env;
    e.seed = cfg.env_seed_offset + cfg.seed * 100003 + s;
    const expert::ExpertTrajectory ex = expert::solve_and_rollout(e, solver);
    const std::size_t expert_index = out.experts.size();
    out.experts.push_back(ex.episode);
    out.duals.push_back(ex.duals);

    std::vector<double> expert_coefs;
    for (const auto& st : ex.episode.steps) expert_coefs.push_back(st.state.bid_coefficient);

    for (std::size_t n = 0; n < cfg.episodes_per_seed; ++n) {
      std::vector<double> coefs(e.num_steps);
      double initial = 0.0;
      if (rng.uniform() < cfg.noisy_expert_fraction) {
        double offset = rng.uniform(-cfg.noise_scale_max, cfg.noise_scale_max);
        initial = ex.initial_state.bid_coefficient * std::exp(offset);
        for (std::size_t t = 0; t < coefs.size(); ++t) {
          offset = (1.0 - cfg.walk_reversion) * offset + cfg.walk_sigma * rng.normal();
          coefs[t] = expert_coefs[t] * std::exp(offset);
        }
      } else {
        initial = std::exp(rng.uniform(log_lo, log_hi));
        std::fill(coefs.begin(), coefs.end(), initial);
      }
      out.episodes.push_back(play_coefficients(e, initial, coefs));
      out.expert_of.push_back(expert_index);
    }
  }
  return out;
}

}  // namespace egdp::data
