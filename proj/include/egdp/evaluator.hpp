#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "egdp/auction.hpp"
#include "egdp/config.hpp"
#include "egdp/policy.hpp"

namespace egdp::eval {

struct PolicySpec {
  PolicyKind kind = PolicyKind::kFixedBid;
  std::string label;  // row label; empty uses the kind name
  double coefficient = 0.0;  // fixed_bid
  PidGains pid;
  double pid_initial = 0.0;
  std::filesystem::path checkpoint;     // egdp, loaded when model is null
  std::shared_ptr<const TrainerState> model;
  std::filesystem::path bc_checkpoint;  // behavior_clone, loaded when bc is null
  std::shared_ptr<BcModel> bc;
  diffusion::SamplerConfig sampler;
  PlanTarget target;
  std::size_t plan_every = 1;
  expert::DualSolverOptions expert;
  bool record_timing = true;

  std::string name() const { return label.empty() ? policy_name(kind) : label; }
  // Loads referenced checkpoints. Throws ConfigError when one is missing.
  void resolve();
};

struct EpisodeResult {
  auction::EpisodeRecord record;
  double score = 0.0;
  double conversions = 0.0;
  double cost = 0.0;
  double cpa = 0.0;  // 0 with no spend, +inf with spend but no conversions
  double budget_util = 0.0;
  double plan_ms = 0.0;
  std::size_t denoiser_evals = 0;
  std::size_t planning_calls = 0;
};

// One episode on env with env.seed = seed. The controlled agent follows the
// policy; the competitors keep their seeded constant coefficients. The
// history passed to the policy is always the realized one.
EpisodeResult run_episode(PolicySpec& spec, const auction::EnvConfig& env, std::uint64_t seed,
                          const auction::ScoreConfig& score = {});

// Log-spaced constant coefficients in [lo, hi].
std::vector<double> coefficient_grid(double lo, double hi, std::size_t points);

struct GridBest {
  double coefficient = 0.0;
  double mean_score = 0.0;
  std::vector<double> mean_scores;  // one per grid point
};

// Constant policy with the highest mean score over `seeds`.
GridBest grid_best_coefficient(const auction::EnvConfig& env, const std::vector<std::uint64_t>& seeds,
                               const std::vector<double>& grid, const auction::ScoreConfig& score = {});

struct ScoreRow {
  std::string policy;
  std::uint64_t seed = 0;
  double score = 0.0;
  double conversions = 0.0;
  double cost = 0.0;
  double cpa = 0.0;
  double budget_util = 0.0;
  double plan_ms = 0.0;
  std::size_t denoiser_evals = 0;
};

struct SummaryRow {
  std::string policy;
  std::size_t episodes = 0;
  double mean_score = 0.0;
  double std_score = 0.0;  // population standard deviation
  double mean_denoiser_evals = 0.0;
};

struct ScoreTable {
  std::vector<ScoreRow> rows;

  // One row per policy, in order of first appearance.
  std::vector<SummaryRow> summary() const;
  const SummaryRow& summary_of(const std::string& policy) const;
  std::string csv() const;
  std::string summary_csv() const;
};

// Every (policy, seed) pair in order; duplicate seeds give duplicate rows.
// When csv_path is set the table is rewritten after every row so partial
// results survive a failure.
ScoreTable evaluate(std::vector<PolicySpec>& policies, const auction::EnvConfig& env,
                    const std::vector<std::uint64_t>& seeds, const auction::ScoreConfig& score = {},
                    const std::filesystem::path& csv_path = {});

struct PolicyResources {
  std::shared_ptr<const TrainerState> model;
  std::shared_ptr<BcModel> bc;
  double initial_coefficient = 0.0;  // for PID when eval.pid_initial is 0
};

// Specs for cfg.eval.policies. A fixed_coefficient of 0 resolves to the
// grid-best constant over the evaluation seeds.
std::vector<PolicySpec> make_policy_specs(const RunConfig& cfg, const PolicyResources& res);

struct SweepRow {
  std::string param;
  double value = 0.0;
  double mean_score = 0.0;
  double std_score = 0.0;
  double denoiser_evals = 0.0;  // mean per episode
  std::size_t evals_per_plan = 0;
  std::filesystem::path checkpoint;
};

struct SweepReport {
  std::vector<SweepRow> rows;
  std::vector<std::filesystem::path> files;
  std::string csv() const;
};

// gamma reuses one model (base_model, or one trained into out_dir/sweep_base);
// delta and xi retrain into out_dir/sweep_<param>_<value>. Only the egdp
// policy is scored, on cfg.eval.seeds.
SweepReport sweep(const RunConfig& cfg, const data::Dataset& d, const std::string& param,
                  const std::vector<double>& values, const std::filesystem::path& out_dir,
                  std::shared_ptr<const TrainerState> base_model = nullptr);

// Shortest round-trip decimal form.
std::string format_double(double x);

}  // namespace egdp::eval
