#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "egdp/auction.hpp"

namespace egdp::expert {

inline constexpr double kAlphaFloor = 1e-3;
inline constexpr double kAlphaCeil = 1e3;

struct DualMultipliers {
  double alpha_b = kAlphaFloor;  // budget dual
  double alpha_c = kAlphaFloor;  // cost (CPA) dual
};

// (1 + alpha_c * C) / (alpha_b + alpha_c): the factor applied to each value.
double bid_multiplier(const DualMultipliers& duals, double target_cpa);

// x_j = (1 + alpha_c * C) / (alpha_b + alpha_c) * v_j.
// Throws DegenerateDualError when alpha_b + alpha_c <= 0.
double expert_bid(double value, const DualMultipliers& duals, double target_cpa);

// One query of the replay set, seen from the controlled agent. `value` is in
// conversion units (expected conversions if won) so that the CPA constraint
// reads spend / value <= C.
struct ReplayItem {
  double value = 0.0;
  double competitor_price = 0.0;  // highest competing bid, paid on a win
};

struct ReplayOutcome {
  double spend = 0.0;
  double conversions = 0.0;
  std::size_t wins = 0;

  // +inf when there is spend without conversions, 0 when nothing was spent.
  double cpa() const;
};

// Replays bids multiplier * value over the set with no budget gate, so the
// result is the allocation the bidding LP sees.
ReplayOutcome replay(std::span<const ReplayItem> items, double multiplier);

std::vector<ReplayItem> build_replay_set(const auction::EnvConfig& cfg,
                                         const std::vector<auction::ImpressionOpportunity>& stream);

struct DualSolverOptions {
  std::size_t grid_points = 25;
  double alpha_min = kAlphaFloor;
  double alpha_max = kAlphaCeil;
  double rel_tol = 1e-3;
  double slack_fraction = 0.99;
};

struct DualSolution {
  DualMultipliers duals;
  bool feasible = false;
  ReplayOutcome outcome;
};

// 2-D log grid over (alpha_b, alpha_c) followed by bisection along each axis
// with the other multiplier at the floor. Among feasible candidates the one
// with the most conversions wins; ties prefer complementary slackness. When
// nothing is feasible the grid pair with the smallest constraint violation is
// returned with feasible = false. A zero budget is always reported infeasible.
DualSolution solve_duals(std::span<const ReplayItem> items, double budget, double target_cpa,
                         const DualSolverOptions& opts = {});

struct ExpertTrajectory {
  auction::StepState initial_state;
  std::vector<auction::StepState> states;  // T rows, the state after each step
  std::vector<double> per_query_bids;
  double realized_cost = 0.0;
  double realized_value = 0.0;
  DualMultipliers duals;
  bool feasible = true;
  auction::EpisodeRecord episode;
};

ExpertTrajectory rollout_expert(const auction::EnvConfig& cfg, const DualMultipliers& duals);

// solve_duals on the seed's own impression stream, then rollout_expert.
ExpertTrajectory solve_and_rollout(const auction::EnvConfig& cfg, const DualSolverOptions& opts = {});

}  // namespace egdp::expert
