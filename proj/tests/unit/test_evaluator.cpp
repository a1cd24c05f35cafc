#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <memory>

#include "egdp/auction.hpp"
#include "egdp/config.hpp"
#include "egdp/dataset.hpp"
#include "egdp/error.hpp"
#include "egdp/evaluator.hpp"
#include "egdp/policy.hpp"
#include "egdp/trainer.hpp"

using namespace egdp;
using namespace egdp::eval;

namespace {

auction::EnvConfig small_env() {
  auction::EnvConfig e;
  e.num_agents = 3;
  e.num_steps = 6;
  e.impressions_per_step = 20;
  e.set_agents(20.0, 5.0, 1e6, 5.0);
  return e;
}

data::Dataset small_dataset() {
  data::DataGenConfig g;
  g.num_seeds = 2;
  g.episodes_per_seed = 4;
  g.seed = 5;
  auto gen = data::generate(small_env(), g);
  return data::build_dataset(gen.episodes, gen.expert_of, gen.experts);
}

TrainConfig small_train_config() {
  TrainConfig c;
  c.K = 16;
  c.steps = 30;
  c.batch_size = 4;
  c.early_stop = false;
  c.seed = 7;
  c.model.model_dim = 8;
  c.model.heads = 2;
  c.model.ffn_mult = 2;
  c.model.latent_dim = 4;
  c.model.inv_history = 2;
  c.model.inv_hidden = 8;
  return c;
}

// Trained once and shared by the planner tests.
std::shared_ptr<const TrainerState> small_model() {
  static const std::shared_ptr<const TrainerState> model = [] {
    return std::make_shared<const TrainerState>(train(small_train_config(), small_dataset()).state);
  }();
  return model;
}

PolicySpec fixed(double c) {
  PolicySpec s;
  s.kind = PolicyKind::kFixedBid;
  s.coefficient = c;
  s.record_timing = false;
  return s;
}

PolicySpec egdp_spec(std::size_t gamma) {
  PolicySpec s;
  s.kind = PolicyKind::kEgdp;
  s.model = small_model();
  s.sampler.gamma = gamma;
  s.record_timing = false;
  return s;
}

std::vector<auction::StepState> realized_prefix(std::size_t t) {
  PolicySpec s = fixed(0.7);
  const EpisodeResult r = run_episode(s, small_env(), 3);
  std::vector<auction::StepState> states{r.record.initial_state};
  for (std::size_t i = 0; i < t; ++i) states.push_back(r.record.steps[i].state);
  return states;
}

}  // namespace

TEST(Evaluator, ZeroCoefficientScoresZero) {
  PolicySpec s = fixed(0.0);
  const EpisodeResult r = run_episode(s, benchmark_env(), 1);
  EXPECT_EQ(r.cost, 0.0);
  EXPECT_EQ(r.conversions, 0.0);
  EXPECT_EQ(r.score, 0.0);
  EXPECT_EQ(r.cpa, 0.0);
}

TEST(Evaluator, ExpertAtLeastGridBestPerSeed) {
  const auction::EnvConfig env = benchmark_env();
  const auto grid = coefficient_grid(0.05, 5.0, 25);
  for (std::uint64_t seed : {1u, 2u}) {
    PolicySpec ex;
    ex.kind = PolicyKind::kExpertOracle;
    ex.record_timing = false;
    const double expert = run_episode(ex, env, seed).score;
    const GridBest gb = grid_best_coefficient(env, {seed}, grid);
    EXPECT_GE(expert, gb.mean_score - 1e-9) << "seed " << seed;
  }
}

TEST(Evaluator, PidWithZeroGainsIsFixedBid) {
  PolicySpec pid;
  pid.kind = PolicyKind::kPid;
  pid.pid = {0.0, 0.0, 0.0};
  pid.pid_initial = 0.9;
  pid.record_timing = false;
  PolicySpec fb = fixed(0.9);
  const auction::EnvConfig env = benchmark_env();
  const EpisodeResult a = run_episode(pid, env, 4);
  const EpisodeResult b = run_episode(fb, env, 4);
  ASSERT_EQ(a.record.steps.size(), b.record.steps.size());
  for (std::size_t t = 0; t < a.record.steps.size(); ++t) {
    EXPECT_EQ(a.record.steps[t].cost, b.record.steps[t].cost);
    EXPECT_EQ(a.record.steps[t].action, 0.0);
  }
  EXPECT_EQ(a.score, b.score);
}

TEST(Evaluator, RowsPerSeedAndSummary) {
  std::vector<PolicySpec> specs{fixed(0.5), fixed(1.0)};
  specs[0].label = "low";
  specs[1].label = "high";
  const ScoreTable table = evaluate(specs, small_env(), {1, 2, 3});
  ASSERT_EQ(table.rows.size(), 6u);
  const auto summary = table.summary();
  ASSERT_EQ(summary.size(), 2u);
  EXPECT_EQ(summary[0].policy, "low");
  EXPECT_EQ(summary[0].episodes, 3u);
  double mean = 0.0;
  for (std::size_t i = 0; i < 3; ++i) mean += table.rows[i].score / 3.0;
  EXPECT_NEAR(table.summary_of("low").mean_score, mean, 1e-12);
  EXPECT_THROW(table.summary_of("missing"), std::exception);
}

TEST(Evaluator, DuplicateSeedsGiveDuplicateRows) {
  std::vector<PolicySpec> specs{fixed(0.8)};
  const ScoreTable table = evaluate(specs, small_env(), {7, 7});
  ASSERT_EQ(table.rows.size(), 2u);
  EXPECT_EQ(table.rows[0].score, table.rows[1].score);
  EXPECT_EQ(table.rows[0].cost, table.rows[1].cost);
  EXPECT_EQ(table.summary_of("fixed_bid").std_score, 0.0);
}

TEST(Evaluator, ScoreIsRecomputableFromTotals) {
  const auction::EnvConfig env = benchmark_env();
  const auction::ScoreConfig sc{};
  for (double c : {0.3, 1.0, 3.0}) {
    PolicySpec s = fixed(c);
    const EpisodeResult r = run_episode(s, env, 9, sc);
    EXPECT_DOUBLE_EQ(r.score, auction::compute_score(r.conversions, r.cost, r.record.target_cpa, sc));
    if (r.cost > 0.0 && r.conversions > 0.0) EXPECT_DOUBLE_EQ(r.cpa, r.cost / r.conversions);
    EXPECT_LE(r.cost, r.record.budget + 1e-9);
  }
}

TEST(Evaluator, CsvHasHeaderAndOneLinePerRow) {
  std::vector<PolicySpec> specs{fixed(0.5)};
  const ScoreTable table = evaluate(specs, small_env(), {1, 2});
  const std::string csv = table.csv();
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
  EXPECT_NE(csv.find("policy"), std::string::npos);
  EXPECT_NE(table.summary_csv().find("fixed_bid"), std::string::npos);
}

TEST(Evaluator, CoefficientGridIsLogSpaced) {
  const auto g = coefficient_grid(0.1, 10.0, 3);
  ASSERT_EQ(g.size(), 3u);
  EXPECT_NEAR(g[0], 0.1, 1e-12);
  EXPECT_NEAR(g[1], 1.0, 1e-12);
  EXPECT_NEAR(g[2], 10.0, 1e-12);
  EXPECT_THROW(coefficient_grid(0.0, 1.0, 3), ConfigError);
  EXPECT_THROW(coefficient_grid(1.0, 2.0, 0), ConfigError);
}

TEST(Evaluator, UnknownPolicyKind) { EXPECT_THROW(parse_policy_kind("random"), ConfigError); }

TEST(Evaluator, EvalCountFollowsGamma) {
  const std::size_t T = small_env().num_steps;
  std::size_t previous = 0;
  for (std::size_t gamma : {1u, 2u, 4u, 8u, 16u}) {
    PolicySpec s = egdp_spec(gamma);
    const EpisodeResult r = run_episode(s, small_env(), 1);
    const std::size_t per_plan = 2 * ((16 + gamma - 1) / gamma);
    EXPECT_EQ(r.denoiser_evals, per_plan * T) << "gamma " << gamma;
    EXPECT_EQ(r.planning_calls, T);
    if (previous) EXPECT_LT(r.denoiser_evals, previous);
    previous = r.denoiser_evals;
  }
}

TEST(Evaluator, PlanEveryReducesPlanningCalls) {
  PolicySpec s = egdp_spec(4);
  s.plan_every = 2;
  const EpisodeResult r = run_episode(s, small_env(), 1);
  EXPECT_EQ(r.planning_calls, 3u);
  EXPECT_EQ(r.denoiser_evals, 3u * 2u * 4u);
}

TEST(Evaluator, EgdpEpisodesAreDeterministic) {
  PolicySpec a = egdp_spec(4), b = egdp_spec(4);
  const EpisodeResult ra = run_episode(a, small_env(), 2);
  const EpisodeResult rb = run_episode(b, small_env(), 2);
  ASSERT_EQ(ra.record.steps.size(), rb.record.steps.size());
  for (std::size_t t = 0; t < ra.record.steps.size(); ++t) EXPECT_EQ(ra.record.steps[t].action, rb.record.steps[t].action);
  EXPECT_EQ(ra.score, rb.score);
}

TEST(Evaluator, HorizonMismatchIsConfigError) {
  PolicySpec s = egdp_spec(4);
  auction::EnvConfig env = small_env();
  env.num_steps = 7;
  EXPECT_THROW(run_episode(s, env, 1), ConfigError);
}

TEST(Evaluator, MissingCheckpointIsConfigError) {
  PolicySpec s;
  s.kind = PolicyKind::kEgdp;
  s.checkpoint = std::filesystem::temp_directory_path() / "egdp_unit_no_such_checkpoint.egdp";
  EXPECT_THROW(s.resolve(), ConfigError);
}

TEST(Planner, PlanStepIsDeterministicAndInpaintsHistory) {
  const auto model = small_model();
  const auto states = realized_prefix(3);
  diffusion::SamplerConfig sc;
  Rng r1(42), r2(42);
  PlanInfo i1, i2;
  const double a1 = plan_step(*model, states, {}, sc, r1, &i1);
  const double a2 = plan_step(*model, states, {}, sc, r2, &i2);
  EXPECT_EQ(a1, a2);
  EXPECT_TRUE(std::isfinite(a1));
  EXPECT_EQ(i1.denoiser_evals, 2u * 4u);
  const auto raw = states[3].to_array();
  for (std::size_t j = 0; j < auction::StepState::kDim; ++j)
    EXPECT_NEAR(i1.trajectory(2, j), model->meta.stats.normalize(j, raw[j]), 1e-12);
}

TEST(Planner, LastStepIsValid) {
  const auto model = small_model();
  const auto states = realized_prefix(small_env().num_steps - 1);
  Rng rng(1);
  PlanInfo info;
  const double a = plan_step(*model, states, {}, {}, rng, &info);
  EXPECT_TRUE(std::isfinite(a));
  EXPECT_TRUE(info.next_state.all_finite());
}

TEST(Planner, ZeroedModelActsZero) {
  auto zeroed = std::make_shared<TrainerState>(*small_model());
  for (auto& p : zeroed->model.params) p.value.fill(0.0);
  const auto states = realized_prefix(2);
  Rng rng(3);
  EXPECT_EQ(plan_step(*zeroed, states, {}, {}, rng), 0.0);
}

TEST(Planner, ForceGammaOnePinsSampler) {
  auto m = std::make_shared<TrainerState>(*small_model());
  m->cfg.force_gamma_1 = true;
  diffusion::SamplerConfig sc;
  sc.gamma = 8;
  EXPECT_EQ(effective_sampler(*m, sc).gamma, 1u);
  EXPECT_EQ(effective_sampler(*small_model(), sc).gamma, 8u);
}

TEST(Sweep, RejectsEmptyAndInvalidValues) {
  RunConfig cfg;
  cfg.train = small_train_config();
  const auto d = small_dataset();
  const auto dir = std::filesystem::temp_directory_path() / "egdp_unit_sweep";
  EXPECT_THROW(sweep(cfg, d, "gamma", {}, dir, small_model()), ConfigError);
  EXPECT_THROW(sweep(cfg, d, "gamma", {0.0}, dir, small_model()), ConfigError);
  EXPECT_THROW(sweep(cfg, d, "delta", {1.5}, dir, small_model()), ConfigError);
}
