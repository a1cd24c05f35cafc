#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "egdp/auction.hpp"
#include "egdp/rng.hpp"
#include "egdp/error.hpp"

using namespace egdp;
using namespace egdp::auction;

namespace {

EnvConfig small_env(std::size_t agents, std::size_t steps, std::size_t per_step, std::uint64_t seed) {
  EnvConfig cfg;
  cfg.num_agents = agents;
  cfg.num_steps = steps;
  cfg.impressions_per_step = per_step;
  cfg.set_agents(100.0, 5.0, 100.0, 5.0);
  cfg.seed = seed;
  return cfg;
}

EpisodeRecord play_constant(const EnvConfig& cfg, double coef) {
  AuctionEnv env(cfg);
  auto coefs = competitor_coefficients(cfg);
  coefs[0] = coef;
  EpisodeRecord ep;
  ep.budget = cfg.budgets[0];
  ep.target_cpa = cfg.target_cpas[0];
  while (!env.done()) {
    const std::size_t t = env.current_step();
    const auto r = env.step(coefs);
    ep.steps.push_back({t, r.agents[0].state, 0.0, r.agents[0].reward, r.agents[0].cost, r.agents[0].wins});
  }
  return ep;
}

}  // namespace

TEST(AuctionSim, StreamHasOneOpportunityPerSlotWithNonnegativeValues) {
  const auto stream = generate_impressions(small_env(2, 2, 3, 7));
  ASSERT_EQ(stream.size(), 6u);
  for (std::size_t j = 0; j < stream.size(); ++j) {
    EXPECT_EQ(stream[j].step, j / 3);
    ASSERT_EQ(stream[j].values.size(), 2u);
    for (double v : stream[j].values) EXPECT_GE(v, 0.0);
  }
}

TEST(AuctionSim, StreamIsDeterministicPerSeed) {
  const auto a = generate_impressions(small_env(3, 4, 5, 11));
  const auto b = generate_impressions(small_env(3, 4, 5, 11));
  const auto c = generate_impressions(small_env(3, 4, 5, 12));
  ASSERT_EQ(a.size(), b.size());
  bool differs = false;
  for (std::size_t j = 0; j < a.size(); ++j) {
    EXPECT_EQ(a[j].values, b[j].values);
    EXPECT_EQ(a[j].exposed, b[j].exposed);
    EXPECT_EQ(a[j].converted, b[j].converted);
    differs = differs || a[j].values != c[j].values;
  }
  EXPECT_TRUE(differs);
}

TEST(AuctionSim, DegenerateLogNormalGivesUnitValues) {
  EnvConfig cfg = small_env(2, 2, 4, 3);
  cfg.value_distribution = {0.0, 0.0};
  for (const auto& opp : generate_impressions(cfg)) {
    for (double v : opp.values) EXPECT_EQ(v, 1.0);
  }
}

TEST(AuctionSim, InvalidDistributionIsConfigError) {
  EnvConfig cfg = small_env(2, 2, 4, 3);
  cfg.value_distribution.sigma = -1.0;
  EXPECT_THROW(generate_impressions(cfg), ConfigError);
  cfg = small_env(2, 2, 4, 3);
  cfg.exposure_prob = 1.5;
  EXPECT_THROW(generate_impressions(cfg), ConfigError);
}

TEST(AuctionSim, SecondPriceHighestWins) {
  const std::vector<double> bids{5, 3, 2};
  const auto o = run_auction(bids);
  ASSERT_TRUE(o.winner.has_value());
  EXPECT_EQ(*o.winner, 0u);
  EXPECT_EQ(o.payment, 3.0);
  EXPECT_EQ(o.winning_bid, 5.0);
}

TEST(AuctionSim, TieGoesToLowestIndex) {
  const std::vector<double> bids{4, 4, 1};
  const auto o = run_auction(bids);
  ASSERT_TRUE(o.winner.has_value());
  EXPECT_EQ(*o.winner, 0u);
  EXPECT_EQ(o.payment, 4.0);
  const std::vector<double> later{1, 4, 4};
  EXPECT_EQ(*run_auction(later).winner, 1u);
}

TEST(AuctionSim, NoPositiveBidNoWinner) {
  const std::vector<double> bids{0, 0};
  const auto o = run_auction(bids);
  EXPECT_FALSE(o.winner.has_value());
  EXPECT_EQ(o.payment, 0.0);
}

TEST(AuctionSim, SingleBidderPaysNothing) {
  const std::vector<double> bids{5};
  const auto o = run_auction(bids);
  ASSERT_TRUE(o.winner.has_value());
  EXPECT_EQ(o.payment, 0.0);
}

TEST(AuctionSim, NanBidIsInputError) {
  const std::vector<double> bids{1.0, std::numeric_limits<double>::quiet_NaN()};
  EXPECT_THROW(run_auction(bids), InputError);
}

TEST(AuctionSim, PaymentNeverExceedsWinningBid) {
  Rng rng(5);
  for (int trial = 0; trial < 2000; ++trial) {
    std::vector<double> bids(4);
    for (auto& b : bids) b = rng.uniform(-1.0, 3.0);
    const auto o = run_auction(bids);
    if (o.winner) {
      EXPECT_LE(o.payment, o.winning_bid);
      EXPECT_EQ(o.winning_bid, bids[*o.winner]);
    }
  }
}

TEST(AuctionSim, ZeroCoefficientEarnsAndSpendsNothing) {
  EnvConfig cfg = small_env(1, 3, 10, 2);
  AuctionEnv env(cfg);
  const std::vector<double> coefs{0.0};
  while (!env.done()) {
    const auto r = env.step(coefs);
    EXPECT_EQ(r.agents[0].reward, 0.0);
    EXPECT_EQ(r.agents[0].cost, 0.0);
    EXPECT_EQ(r.agents[0].wins, 0u);
  }
}

TEST(AuctionSim, LoneAgentWinsForFree) {
  EnvConfig cfg = small_env(1, 1, 1, 9);
  AuctionEnv env(cfg);
  const std::vector<double> coefs{5.0};
  const auto r = env.step(coefs);
  EXPECT_EQ(r.agents[0].wins, 1u);
  EXPECT_EQ(r.agents[0].cost, 0.0);
}

TEST(AuctionSim, NegativeCoefficientIsInputError) {
  AuctionEnv env(small_env(2, 1, 1, 9));
  const std::vector<double> coefs{-1.0, 1.0};
  EXPECT_THROW(env.step(coefs), InputError);
}

TEST(AuctionSim, BudgetGateKeepsEverySpendPrefixWithinBudget) {
  EnvConfig cfg = small_env(4, 12, 40, 21);
  cfg.set_agents(30.0, 5.0, 1e6, 5.0);
  AuctionEnv env(cfg);
  auto coefs = competitor_coefficients(cfg);
  coefs[0] = 20.0;
  double spent = 0.0;
  while (!env.done()) {
    const auto r = env.step(coefs);
    const auto& me = r.agents[0];
    spent += me.cost;
    EXPECT_LE(spent, cfg.budgets[0] + 1e-12);
    EXPECT_GE(env.remaining_budget(0), 0.0);
    EXPECT_GE(me.state.remaining_budget_frac, 0.0);
    EXPECT_LE(me.state.remaining_budget_frac, 1.0);
    EXPECT_LE(me.state.cumulative_consumption, cfg.budgets[0] + 1e-12);
  }
  EXPECT_GT(spent, 0.5 * cfg.budgets[0]);
}

TEST(AuctionSim, ExhaustedBudgetMeansNoFurtherCost) {
  EnvConfig cfg = small_env(3, 6, 30, 4);
  cfg.set_agents(0.0, 5.0, 1e6, 5.0);
  const auto ep = play_constant(cfg, 10.0);
  for (const auto& s : ep.steps) EXPECT_EQ(s.cost, 0.0);
}

TEST(AuctionSim, StateFractionsStayInBounds) {
  EnvConfig cfg = small_env(4, 10, 20, 8);
  const auto ep = play_constant(cfg, 1.2);
  for (const auto& s : ep.steps) {
    const auto& st = s.state;
    for (double f : {st.remaining_budget_frac, st.remaining_traffic_frac, st.time_frac, st.recent_win_rate}) {
      EXPECT_GE(f, 0.0);
      EXPECT_LE(f, 1.0);
    }
    EXPECT_GE(st.recent_cpa_ratio, 0.0);
  }
  EXPECT_DOUBLE_EQ(ep.steps.back().state.time_frac, 1.0);
}

TEST(AuctionSim, EpisodesAreBitIdentical) {
  EnvConfig cfg = small_env(5, 8, 25, 31);
  cfg.reward_mode = RewardMode::kStochastic;
  const auto a = play_constant(cfg, 0.9);
  const auto b = play_constant(cfg, 0.9);
  ASSERT_EQ(a.steps.size(), b.steps.size());
  for (std::size_t t = 0; t < a.steps.size(); ++t) {
    EXPECT_EQ(a.steps[t].state, b.steps[t].state);
    EXPECT_EQ(a.steps[t].reward, b.steps[t].reward);
    EXPECT_EQ(a.steps[t].cost, b.steps[t].cost);
  }
}

TEST(AuctionSim, WinsMonotoneInOwnCoefficientWithSlackBudget) {
  EnvConfig cfg = small_env(4, 6, 50, 13);
  cfg.set_agents(1e9, 5.0, 1e9, 5.0);
  std::size_t previous = 0;
  for (double c = 0.0; c <= 3.0; c += 0.1) {
    const std::size_t wins = play_constant(cfg, c).total_wins();
    EXPECT_GE(wins, previous) << "coefficient " << c;
    previous = wins;
  }
}

TEST(AuctionSim, StochasticRewardCountsExposedConversions) {
  EnvConfig cfg = small_env(1, 2, 50, 17);
  cfg.reward_mode = RewardMode::kStochastic;
  cfg.conversion_scaling = 0.3;
  const auto stream = generate_impressions(cfg);
  double expected = 0.0;
  for (const auto& o : stream) expected += (o.exposed[0] && o.converted[0]) ? 1.0 : 0.0;
  EXPECT_EQ(play_constant(cfg, 1.0).total_reward(), expected);

  cfg.reward_mode = RewardMode::kExpected;
  double mean = 0.0;
  for (const auto& o : stream) mean += expected_conversions(cfg, o.values[0]);
  EXPECT_NEAR(play_constant(cfg, 1.0).total_reward(), mean, 1e-12);
}

TEST(AuctionSim, PenaltyValues) {
  EXPECT_NEAR(penalty(6, 12, 2), 0.25, 1e-12);
  EXPECT_EQ(penalty(10, 5, 2), 1.0);
  EXPECT_EQ(penalty(10, 10, 2), 1.0);
  EXPECT_EQ(penalty(10, std::numeric_limits<double>::infinity(), 2), 0.0);
  EXPECT_EQ(penalty_from_totals(10, 0, 0, 2), 1.0);
  EXPECT_EQ(penalty_from_totals(10, 5, 0, 2), 0.0);
}

TEST(AuctionSim, ScoreValues) {
  EXPECT_NEAR(compute_score(4, 8, 2, {2.0}), 4.0, 1e-12);
  EXPECT_NEAR(compute_score(4, 16, 2, {2.0}), 1.0, 1e-12);
  EXPECT_EQ(compute_score(0, 16, 2, {2.0}), 0.0);
  EXPECT_EQ(compute_score(0, 0, 2, {2.0}), 0.0);
}

TEST(AuctionSim, AgentThatNeverWinsScoresZero) {
  EnvConfig cfg = small_env(3, 4, 20, 1);
  const auto ep = play_constant(cfg, 0.0);
  EXPECT_EQ(ep.total_wins(), 0u);
  EXPECT_EQ(compute_score(ep, {}), 0.0);
}
