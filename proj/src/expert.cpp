#include "egdp/expert.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <optional>

#include "egdp/error.hpp"

namespace egdp::expert {

using auction::AuctionEnv;
using auction::EnvConfig;
using auction::ImpressionOpportunity;

double bid_multiplier(const DualMultipliers& duals, double target_cpa) {
  if (!(duals.alpha_b >= 0.0) || !(duals.alpha_c >= 0.0)) {
    throw DegenerateDualError("expert_bid: dual multipliers must be >= 0");
  }
  const double denom = duals.alpha_b + duals.alpha_c;
  if (!(denom > 0.0)) throw DegenerateDualError("expert_bid: alpha_b + alpha_c must be > 0");
  return (1.0 + duals.alpha_c * target_cpa) / denom;
}

double expert_bid(double value, const DualMultipliers& duals, double target_cpa) {
  if (!(value >= 0.0)) throw InputError("expert_bid: value must be >= 0");
  return bid_multiplier(duals, target_cpa) * value;
}

double ReplayOutcome::cpa() const {
  if (conversions > 0.0) return spend / conversions;
  return spend > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
}

ReplayOutcome replay(std::span<const ReplayItem> items, double multiplier) {
  ReplayOutcome out;
  for (const auto& item : items) {
    const double bid = multiplier * item.value;
    // The controlled agent has the lowest index, so it wins ties.
    if (bid > 0.0 && bid >= item.competitor_price) {
      out.spend += item.competitor_price;
      out.conversions += item.value;
      ++out.wins;
    }
  }
  return out;
}

std::vector<ReplayItem> build_replay_set(const EnvConfig& cfg, const std::vector<ImpressionOpportunity>& stream) {
  const auto coefs = auction::competitor_coefficients(cfg);
  std::vector<ReplayItem> items;
  items.reserve(stream.size());
  for (const auto& opp : stream) {
    double price = 0.0;
    for (std::size_t i = 1; i < cfg.num_agents; ++i) price = std::max(price, coefs[i] * opp.values[i]);
    items.push_back({auction::expected_conversions(cfg, opp.values[0]), price});
  }
  return items;
}

namespace {

struct Candidate {
  DualMultipliers duals;
  ReplayOutcome outcome;
};

bool is_feasible(const ReplayOutcome& o, double budget, double cpa) {
  return o.spend <= budget && o.cpa() <= cpa;
}

double violation(const ReplayOutcome& o, double budget, double cpa) {
  const double budget_v = (o.spend - budget) / std::max(budget, 1e-12);
  const double c = o.cpa();
  const double cpa_v = std::isinf(c) ? std::numeric_limits<double>::max() : (c - cpa) / cpa;
  return std::max({budget_v, cpa_v, 0.0});
}

bool satisfies_slackness(const Candidate& c, double budget, double cpa, const DualSolverOptions& opts) {
  const double tol = opts.alpha_min * (1.0 + 1e-9);
  if (c.outcome.spend < opts.slack_fraction * budget && c.duals.alpha_b > tol) return false;
  if (c.outcome.cpa() < opts.slack_fraction * cpa && c.duals.alpha_c > tol) return false;
  return true;
}

// Bisects log(alpha) on [alpha_min, alpha_max] along one axis for the feasible
// point with the largest bid multiplier.
std::optional<Candidate> bisect_axis(std::span<const ReplayItem> items, double budget, double cpa,
                                     bool budget_axis, const DualSolverOptions& opts) {
  auto make = [&](double a) {
    DualMultipliers d = budget_axis ? DualMultipliers{a, opts.alpha_min} : DualMultipliers{opts.alpha_min, a};
    return Candidate{d, replay(items, bid_multiplier(d, cpa))};
  };
  Candidate lo = make(opts.alpha_min);
  Candidate hi = make(opts.alpha_max);
  const bool lo_ok = is_feasible(lo.outcome, budget, cpa);
  const bool hi_ok = is_feasible(hi.outcome, budget, cpa);
  const double k_lo = bid_multiplier(lo.duals, cpa);
  const double k_hi = bid_multiplier(hi.duals, cpa);

  // Endpoint with the larger multiplier already feasible: nothing to refine.
  if (k_lo >= k_hi && lo_ok) return lo;
  if (k_hi > k_lo && hi_ok) return hi;
  if (!lo_ok && !hi_ok) return std::nullopt;

  double good = std::log(lo_ok ? opts.alpha_min : opts.alpha_max);
  double bad = std::log(lo_ok ? opts.alpha_max : opts.alpha_min);
  Candidate best = lo_ok ? lo : hi;
  while (std::abs(std::exp(bad) - std::exp(good)) > opts.rel_tol * std::exp(std::min(good, bad))) {
    const double mid = 0.5 * (good + bad);
    Candidate c = make(std::exp(mid));
    if (is_feasible(c.outcome, budget, cpa)) {
      good = mid;
      best = c;
    } else {
      bad = mid;
    }
  }
  return best;
}

}  // namespace

DualSolution solve_duals(std::span<const ReplayItem> items, double budget, double target_cpa,
                         const DualSolverOptions& opts) {
  if (items.empty()) throw InputError("solve_duals: empty impression set");
  if (!(target_cpa > 0.0)) throw InputError("solve_duals: target CPA must be > 0");
  if (!(budget >= 0.0)) throw InputError("solve_duals: budget must be >= 0");
  if (opts.grid_points < 2 || !(opts.alpha_min > 0.0) || !(opts.alpha_max > opts.alpha_min)) {
    throw ConfigError("expert: invalid dual solver grid");
  }
  // No positive bid fits a zero budget: report the lowest-bid pair.
  if (budget == 0.0) {
    DualSolution sol;
    sol.duals = {opts.alpha_max, opts.alpha_min};
    sol.feasible = false;
    return sol;
  }

  const double log_lo = std::log(opts.alpha_min);
  const double log_hi = std::log(opts.alpha_max);
  const auto grid_value = [&](std::size_t i) {
    return std::exp(log_lo + (log_hi - log_lo) * static_cast<double>(i) / static_cast<double>(opts.grid_points - 1));
  };

  std::vector<Candidate> feasible;
  std::optional<Candidate> least_violating;
  double least_violation = std::numeric_limits<double>::infinity();
  for (std::size_t ib = 0; ib < opts.grid_points; ++ib) {
    for (std::size_t ic = 0; ic < opts.grid_points; ++ic) {
      const DualMultipliers d{grid_value(ib), grid_value(ic)};
      Candidate c{d, replay(items, bid_multiplier(d, target_cpa))};
      if (is_feasible(c.outcome, budget, target_cpa)) {
        feasible.push_back(c);
      } else {
        const double v = violation(c.outcome, budget, target_cpa);
        if (v < least_violation) {
          least_violation = v;
          least_violating = c;
        }
      }
    }
  }

  if (feasible.empty()) {
    DualSolution sol;
    sol.duals = least_violating->duals;
    sol.outcome = least_violating->outcome;
    sol.feasible = false;
    return sol;
  }

  // Best grid point, then the two axis refinements.
  std::vector<Candidate> candidates;
  candidates.push_back(*std::max_element(feasible.begin(), feasible.end(), [](const Candidate& a, const Candidate& b) {
    return a.outcome.conversions < b.outcome.conversions;
  }));
  if (auto c = bisect_axis(items, budget, target_cpa, true, opts)) candidates.push_back(*c);
  if (auto c = bisect_axis(items, budget, target_cpa, false, opts)) candidates.push_back(*c);

  const Candidate* best = nullptr;
  for (const auto& c : candidates) {
    if (!best) {
      best = &c;
      continue;
    }
    const double a = c.outcome.conversions;
    const double b = best->outcome.conversions;
    const bool tie = std::abs(a - b) <= 1e-9 * std::max({1.0, std::abs(a), std::abs(b)});
    if (tie) {
      if (satisfies_slackness(c, budget, target_cpa, opts) && !satisfies_slackness(*best, budget, target_cpa, opts)) {
        best = &c;
      }
    } else if (a > b) {
      best = &c;
    }
  }

  DualSolution sol;
  sol.duals = best->duals;
  sol.outcome = best->outcome;
  sol.feasible = true;
  return sol;
}

ExpertTrajectory rollout_expert(const EnvConfig& cfg, const DualMultipliers& duals) {
  const double cpa = cfg.target_cpas.at(0);
  (void)bid_multiplier(duals, cpa);  // validates the duals up front

  AuctionEnv env(cfg);
  const auto coefs = auction::competitor_coefficients(cfg);

  ExpertTrajectory traj;
  traj.duals = duals;
  traj.per_query_bids.reserve(env.impressions().size());
  traj.episode.budget = cfg.budgets.at(0);
  traj.episode.target_cpa = cpa;

  const AuctionEnv::BidRule rule = [&](std::size_t agent, const ImpressionOpportunity& opp) {
    if (agent == 0) {
      const double bid = expert_bid(auction::expected_conversions(cfg, opp.values[0]), duals, cpa);
      traj.per_query_bids.push_back(bid);
      return bid;
    }
    return coefs[agent] * opp.values[agent];
  };

  double previous_coef = 0.0;
  while (!env.done()) {
    const std::size_t t = env.current_step();
    const auto result = env.step(rule);
    const auto& me = result.agents[0];
    if (t == 0) {
      traj.initial_state = env.initial_state(0, me.state.bid_coefficient);
      previous_coef = me.state.bid_coefficient;
    }
    traj.states.push_back(me.state);
    traj.episode.steps.push_back({t, me.state, me.state.bid_coefficient - previous_coef, me.reward, me.cost, me.wins});
    previous_coef = me.state.bid_coefficient;
    traj.realized_cost += me.cost;
    traj.realized_value += me.reward;
  }
  traj.episode.initial_state = traj.initial_state;
  return traj;
}

ExpertTrajectory solve_and_rollout(const EnvConfig& cfg, const DualSolverOptions& opts) {
  const auto stream = auction::generate_impressions(cfg);
  const auto items = build_replay_set(cfg, stream);
  const DualSolution sol = solve_duals(items, cfg.budgets.at(0), cfg.target_cpas.at(0), opts);
  ExpertTrajectory traj = rollout_expert(cfg, sol.duals);
  traj.feasible = sol.feasible;
  return traj;
}

}  // namespace egdp::expert
