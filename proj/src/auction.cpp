#include "egdp/auction.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "egdp/error.hpp"
#include "egdp/rng.hpp"

namespace egdp::auction {

namespace {

// Hash streams for the per-(opportunity, agent) draws.
constexpr std::uint64_t kValueStreamA = 1;
constexpr std::uint64_t kValueStreamB = 2;
constexpr std::uint64_t kExposureStream = 3;
constexpr std::uint64_t kConversionStream = 4;
constexpr std::uint64_t kMarketStream = 5;

void require(bool ok, const std::string& field, const std::string& why) {
  if (!ok) throw ConfigError("env." + field + ": " + why);
}

}  // namespace

void EnvConfig::set_agents(double controlled_budget, double controlled_cpa, double competitor_budget,
                           double competitor_cpa) {
  budgets.assign(num_agents, competitor_budget);
  target_cpas.assign(num_agents, competitor_cpa);
  if (num_agents > 0) {
    budgets[0] = controlled_budget;
    target_cpas[0] = controlled_cpa;
  }
}

void EnvConfig::validate() const {
  require(num_agents >= 1, "num_agents", "must be >= 1");
  require(num_steps >= 1, "num_steps", "must be >= 1");
  require(impressions_per_step >= 1, "impressions_per_step", "must be >= 1");
  require(budgets.size() == num_agents, "budgets", "need one entry per agent");
  require(target_cpas.size() == num_agents, "target_cpas", "need one entry per agent");
  for (double b : budgets) require(std::isfinite(b) && b >= 0.0, "budgets", "must be finite and >= 0");
  for (double c : target_cpas) require(std::isfinite(c) && c > 0.0, "target_cpas", "must be > 0");
  require(std::isfinite(value_distribution.mu), "value_distribution.mu", "must be finite");
  require(std::isfinite(value_distribution.sigma) && value_distribution.sigma >= 0.0,
          "value_distribution.sigma", "must be finite and >= 0");
  require(exposure_prob >= 0.0 && exposure_prob <= 1.0, "exposure_prob", "must lie in [0, 1]");
  require(std::isfinite(conversion_scaling) && conversion_scaling > 0.0, "conversion_scaling",
          "must be > 0");
  require(market_level_min > 0.0 && market_level_max >= market_level_min, "market_level_min",
          "need 0 < market_level_min <= market_level_max");
  require(competitor_spread >= 0.0 && competitor_spread < 1.0, "competitor_spread", "must lie in [0, 1)");
  require(state_window >= 1, "state_window", "must be >= 1");
}

std::array<double, StepState::kDim> StepState::to_array() const {
  return {bid_coefficient,       remaining_budget_frac, remaining_traffic_frac, cumulative_consumption,
          cumulative_revenue,    time_frac,             recent_win_rate,        recent_cpa_ratio};
}

StepState StepState::from_span(std::span<const double> v) {
  if (v.size() != kDim) throw ShapeError("StepState::from_span: expected " + std::to_string(kDim) + " values");
  return StepState{v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7]};
}

double EpisodeRecord::total_reward() const {
  double s = 0.0;
  for (const auto& st : steps) s += st.reward;
  return s;
}

double EpisodeRecord::total_cost() const {
  double s = 0.0;
  for (const auto& st : steps) s += st.cost;
  return s;
}

std::size_t EpisodeRecord::total_wins() const {
  std::size_t s = 0;
  for (const auto& st : steps) s += st.wins;
  return s;
}

double conversion_probability(const EnvConfig& cfg, double value) {
  return std::min(cfg.conversion_scaling * value, 1.0);
}

double expected_conversions(const EnvConfig& cfg, double value) {
  return cfg.exposure_prob * conversion_probability(cfg, value);
}

std::vector<ImpressionOpportunity> generate_impressions(const EnvConfig& cfg) {
  cfg.validate();
  const std::size_t total = cfg.num_steps * cfg.impressions_per_step;
  std::vector<ImpressionOpportunity> out(total);
  for (std::size_t j = 0; j < total; ++j) {
    auto& opp = out[j];
    opp.step = j / cfg.impressions_per_step;
    opp.values.resize(cfg.num_agents);
    opp.exposed.resize(cfg.num_agents);
    opp.converted.resize(cfg.num_agents);
    for (std::size_t i = 0; i < cfg.num_agents; ++i) {
      const double z = standard_normal_from(hash_coords(cfg.seed, j, i, kValueStreamA),
                                            hash_coords(cfg.seed, j, i, kValueStreamB));
      const double v = std::exp(cfg.value_distribution.mu + cfg.value_distribution.sigma * z);
      opp.values[i] = v;
      opp.exposed[i] = unit_interval(hash_coords(cfg.seed, j, i, kExposureStream)) < cfg.exposure_prob;
      opp.converted[i] =
          unit_interval(hash_coords(cfg.seed, j, i, kConversionStream)) < conversion_probability(cfg, v);
    }
  }
  return out;
}

std::vector<double> competitor_coefficients(const EnvConfig& cfg) {
  cfg.validate();
  std::vector<double> coefs(cfg.num_agents, 0.0);
  const double lo = std::log(cfg.market_level_min);
  const double hi = std::log(cfg.market_level_max);
  const double level = std::exp(lo + (hi - lo) * unit_interval(hash_coords(cfg.seed, kMarketStream, 0)));
  for (std::size_t i = 1; i < cfg.num_agents; ++i) {
    const double u = 2.0 * unit_interval(hash_coords(cfg.seed, kMarketStream, i)) - 1.0;
    coefs[i] = level * (1.0 + cfg.competitor_spread * u);
  }
  return coefs;
}

AuctionOutcome run_auction(std::span<const double> bids) {
  AuctionOutcome out;
  std::optional<std::size_t> best;
  double best_bid = 0.0;
  double second = 0.0;
  for (std::size_t i = 0; i < bids.size(); ++i) {
    const double b = bids[i];
    if (std::isnan(b)) throw InputError("run_auction: NaN bid for agent " + std::to_string(i));
    if (!std::isfinite(b)) throw InputError("run_auction: non-finite bid for agent " + std::to_string(i));
    if (b <= 0.0) continue;
    if (!best || b > best_bid) {
      if (best) second = std::max(second, best_bid);
      best = i;
      best_bid = b;
    } else {
      second = std::max(second, b);
    }
  }
  if (best) {
    out.winner = best;
    out.winning_bid = best_bid;
    out.payment = second;
  }
  return out;
}

AuctionEnv::AuctionEnv(EnvConfig cfg)
    : AuctionEnv(cfg, std::make_shared<const std::vector<ImpressionOpportunity>>(generate_impressions(cfg))) {}

AuctionEnv::AuctionEnv(EnvConfig cfg, std::shared_ptr<const std::vector<ImpressionOpportunity>> stream)
    : cfg_(std::move(cfg)), stream_(std::move(stream)) {
  cfg_.validate();
  if (!stream_ || stream_->size() != cfg_.num_steps * cfg_.impressions_per_step) {
    throw ConfigError("env: impression stream does not match num_steps * impressions_per_step");
  }
  agents_.resize(cfg_.num_agents);
  for (std::size_t i = 0; i < cfg_.num_agents; ++i) agents_[i].remaining = cfg_.budgets[i];
}

StepState AuctionEnv::initial_state(std::size_t agent, double initial_coefficient) const {
  (void)agents_.at(agent);
  StepState s;
  s.bid_coefficient = initial_coefficient;
  return s;
}

StepResult AuctionEnv::step(std::span<const double> coefficients) {
  if (coefficients.size() != cfg_.num_agents) {
    throw InputError("step: expected " + std::to_string(cfg_.num_agents) + " coefficients");
  }
  for (std::size_t i = 0; i < coefficients.size(); ++i) {
    if (!(coefficients[i] >= 0.0) || !std::isfinite(coefficients[i])) {
      throw InputError("step: coefficient for agent " + std::to_string(i) + " must be finite and >= 0");
    }
  }
  const std::vector<double> coefs(coefficients.begin(), coefficients.end());
  return run_step([&coefs](std::size_t agent, const ImpressionOpportunity& opp) {
    return coefs[agent] * opp.values[agent];
  }, coefs);
}

StepResult AuctionEnv::step(const BidRule& rule) { return run_step(rule, {}); }

StepResult AuctionEnv::run_step(const BidRule& rule, std::span<const double> reported_coefficients) {
  if (done()) throw StateError("step: episode already terminated");
  const std::size_t n = cfg_.num_agents;
  const std::size_t per_step = cfg_.impressions_per_step;
  const std::size_t begin = step_ * per_step;

  std::vector<WindowEntry> current(n);
  std::vector<double> reward(n, 0.0);
  std::vector<double> bid_sum(n, 0.0);
  std::vector<double> value_sum(n, 0.0);
  std::vector<double> bids(n, 0.0);

  for (std::size_t j = begin; j < begin + per_step; ++j) {
    const auto& opp = (*stream_)[j];
    for (std::size_t i = 0; i < n; ++i) {
      double b = rule(i, opp);
      if (std::isnan(b) || !std::isfinite(b)) throw InputError("step: non-finite bid for agent " + std::to_string(i));
      b = std::max(b, 0.0);
      bid_sum[i] += b;
      value_sum[i] += opp.values[i];
      // Budget gate: a bid the remaining budget could not cover is withdrawn.
      if (agents_[i].remaining < b) b = 0.0;
      bids[i] = b;
      ++current[i].opportunities;
    }
    const AuctionOutcome outcome = run_auction(bids);
    if (!outcome.winner) continue;
    const std::size_t w = *outcome.winner;
    auto& book = agents_[w];
    book.remaining = std::max(book.remaining - outcome.payment, 0.0);
    book.spend += outcome.payment;
    double r = 0.0;
    if (cfg_.reward_mode == RewardMode::kExpected) {
      r = expected_conversions(cfg_, opp.values[w]);
    } else {
      r = (opp.exposed[w] && opp.converted[w]) ? 1.0 : 0.0;
    }
    reward[w] += r;
    current[w].cost += outcome.payment;
    current[w].conversions += r;
    ++current[w].wins;
  }

  ++step_;
  StepResult result;
  result.agents.resize(n);
  const double total_opps = static_cast<double>(cfg_.num_steps * per_step);
  for (std::size_t i = 0; i < n; ++i) {
    auto& book = agents_[i];
    book.revenue += reward[i];
    book.window.push_back(current[i]);
    while (book.window.size() > cfg_.state_window) book.window.pop_front();

    WindowEntry agg;
    for (const auto& e : book.window) {
      agg.wins += e.wins;
      agg.opportunities += e.opportunities;
      agg.cost += e.cost;
      agg.conversions += e.conversions;
    }

    StepState s;
    if (!reported_coefficients.empty()) {
      s.bid_coefficient = reported_coefficients[i];
    } else {
      s.bid_coefficient = value_sum[i] > 0.0 ? bid_sum[i] / value_sum[i] : 0.0;
    }
    const double budget = cfg_.budgets[i];
    s.remaining_budget_frac = budget > 0.0 ? std::clamp(book.remaining / budget, 0.0, 1.0) : 0.0;
    s.remaining_traffic_frac = static_cast<double>((cfg_.num_steps - step_) * per_step) / total_opps;
    s.cumulative_consumption = book.spend;
    s.cumulative_revenue = book.revenue;
    s.time_frac = static_cast<double>(step_) / static_cast<double>(cfg_.num_steps);
    s.recent_win_rate =
        agg.opportunities > 0 ? static_cast<double>(agg.wins) / static_cast<double>(agg.opportunities) : 0.0;
    if (agg.conversions > 0.0) {
      s.recent_cpa_ratio = std::min(agg.cost / agg.conversions / cfg_.target_cpas[i], kMaxCpaRatio);
    } else {
      s.recent_cpa_ratio = agg.cost > 0.0 ? kMaxCpaRatio : 0.0;
    }

    result.agents[i] = AgentStep{s, reward[i], current[i].cost, current[i].wins};
  }
  return result;
}

double penalty(double cpa_target, double realized_cpa, double lambda) {
  if (!(cpa_target > 0.0)) throw InputError("penalty: cpa_target must be > 0");
  if (!(lambda > 0.0)) throw InputError("penalty: lambda must be > 0");
  if (std::isnan(realized_cpa) || realized_cpa < 0.0) throw InputError("penalty: realized CPA must be >= 0");
  if (std::isinf(realized_cpa)) return 0.0;
  if (realized_cpa <= cpa_target) return 1.0;
  return std::min(std::pow(cpa_target / realized_cpa, lambda), 1.0);
}

double penalty_from_totals(double cpa_target, double cost, double conversions, double lambda) {
  if (conversions <= 0.0) {
    if (cost <= 0.0) return penalty(cpa_target, 0.0, lambda);
    return penalty(cpa_target, std::numeric_limits<double>::infinity(), lambda);
  }
  return penalty(cpa_target, cost / conversions, lambda);
}

double compute_score(double conversions, double cost, double cpa_target, const ScoreConfig& cfg) {
  return penalty_from_totals(cpa_target, cost, conversions, cfg.lambda) * conversions;
}

double compute_score(const EpisodeRecord& episode, const ScoreConfig& cfg) {
  return compute_score(episode.total_reward(), episode.total_cost(), episode.target_cpa, cfg);
}

}  // namespace egdp::auction
