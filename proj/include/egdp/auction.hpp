#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <vector>

namespace egdp::auction {

enum class RewardMode { kExpected, kStochastic };

struct LogNormalSpec {
  double mu = 0.0;
  double sigma = 0.5;
};

// Synthetic market. Agent 0 is the controlled advertiser; the others bid
// constant coefficients drawn from the seed (see competitor_coefficients).
struct EnvConfig {
  std::size_t num_agents = 8;
  std::size_t num_steps = 48;
  std::size_t impressions_per_step = 200;
  std::vector<double> budgets;      // one per agent
  std::vector<double> target_cpas;  // one per agent
  LogNormalSpec value_distribution;
  double exposure_prob = 0.8;
  double conversion_scaling = 0.02;
  // Competitor coefficient c_i = m * (1 + spread * u_i), u_i ~ U(-1, 1), with
  // the market level m log-uniform in [market_level_min, market_level_max].
  double market_level_min = 1.0;
  double market_level_max = 1.0;
  double competitor_spread = 0.2;
  RewardMode reward_mode = RewardMode::kExpected;
  std::size_t state_window = 3;  // steps covered by the recent_* features
  std::uint64_t seed = 0;

  // Sets budgets/target_cpas for the controlled agent and all competitors.
  void set_agents(double controlled_budget, double controlled_cpa, double competitor_budget,
                  double competitor_cpa);
  // Throws ConfigError naming the offending field.
  void validate() const;
};

struct ImpressionOpportunity {
  std::size_t step = 0;
  std::vector<double> values;           // v_ij, one per agent
  std::vector<std::uint8_t> exposed;    // E_i draw
  std::vector<std::uint8_t> converted;  // V_i draw
};

struct AuctionOutcome {
  std::optional<std::size_t> winner;
  double payment = 0.0;
  double winning_bid = 0.0;
};

// Fixed-dimension state seen by policies and modelled by the planner.
struct StepState {
  static constexpr std::size_t kDim = 8;

  double bid_coefficient = 0.0;
  double remaining_budget_frac = 1.0;
  double remaining_traffic_frac = 1.0;
  double cumulative_consumption = 0.0;
  double cumulative_revenue = 0.0;
  double time_frac = 0.0;
  double recent_win_rate = 0.0;
  double recent_cpa_ratio = 0.0;

  std::array<double, kDim> to_array() const;
  static StepState from_span(std::span<const double> v);
  bool operator==(const StepState&) const = default;
};

// CPA ratio reported when a window has cost but no conversions.
inline constexpr double kMaxCpaRatio = 10.0;

struct AgentStep {
  StepState state;
  double reward = 0.0;
  double cost = 0.0;
  std::size_t wins = 0;
};

struct StepResult {
  std::vector<AgentStep> agents;
};

struct ScoreConfig {
  double lambda = 2.0;
};

struct StepRecord {
  std::size_t t = 0;
  StepState state;
  double action = 0.0;
  double reward = 0.0;
  double cost = 0.0;
  std::size_t wins = 0;
};

struct EpisodeRecord {
  StepState initial_state;
  std::vector<StepRecord> steps;
  double budget = 0.0;
  double target_cpa = 0.0;

  double total_reward() const;
  double total_cost() const;
  std::size_t total_wins() const;
};

double conversion_probability(const EnvConfig& cfg, double value);
// exposure_prob * conversion_probability: the expected conversions of a won impression.
double expected_conversions(const EnvConfig& cfg, double value);

std::vector<ImpressionOpportunity> generate_impressions(const EnvConfig& cfg);

// Entry 0 (the controlled agent) is 0.
std::vector<double> competitor_coefficients(const EnvConfig& cfg);

// Single-slot second-price auction; ties go to the lowest index.
AuctionOutcome run_auction(std::span<const double> bids);

class AuctionEnv {
 public:
  using BidRule = std::function<double(std::size_t agent, const ImpressionOpportunity& opp)>;

  explicit AuctionEnv(EnvConfig cfg);
  AuctionEnv(EnvConfig cfg, std::shared_ptr<const std::vector<ImpressionOpportunity>> stream);

  const EnvConfig& config() const noexcept { return cfg_; }
  const std::vector<ImpressionOpportunity>& impressions() const noexcept { return *stream_; }
  std::size_t current_step() const noexcept { return step_; }
  bool done() const noexcept { return step_ >= cfg_.num_steps; }
  double remaining_budget(std::size_t agent) const { return agents_.at(agent).remaining; }

  StepState initial_state(std::size_t agent, double initial_coefficient) const;

  // Every opportunity of the current step is auctioned with bid coef_i * v_ij.
  StepResult step(std::span<const double> coefficients);
  // Arbitrary per-opportunity bids. The state reports the effective
  // coefficient sum(bids) / sum(values) over the step.
  StepResult step(const BidRule& rule);

 private:
  struct WindowEntry {
    std::size_t wins = 0;
    std::size_t opportunities = 0;
    double cost = 0.0;
    double conversions = 0.0;
  };
  struct AgentBook {
    double remaining = 0.0;
    double spend = 0.0;
    double revenue = 0.0;
    std::deque<WindowEntry> window;
  };

  StepResult run_step(const BidRule& rule, std::span<const double> reported_coefficients);

  EnvConfig cfg_;
  std::shared_ptr<const std::vector<ImpressionOpportunity>> stream_;
  std::vector<AgentBook> agents_;
  std::size_t step_ = 0;
};

// min((cpa_target / realized_cpa)^lambda, 1). realized_cpa may be +inf (-> 0).
double penalty(double cpa_target, double realized_cpa, double lambda);
// Penalty from episode totals with the zero-conversion conventions:
// no cost and no conversions -> 1, cost without conversions -> 0.
double penalty_from_totals(double cpa_target, double cost, double conversions, double lambda);

double compute_score(double conversions, double cost, double cpa_target, const ScoreConfig& cfg);
double compute_score(const EpisodeRecord& episode, const ScoreConfig& cfg);

}  // namespace egdp::auction
