#include "egdp/evaluator.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <limits>

#include "egdp/error.hpp"
#include "egdp/expert.hpp"

namespace egdp::eval {

using auction::EpisodeRecord;
using auction::StepState;

std::string format_double(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

void PolicySpec::resolve() {
  if (kind == PolicyKind::kEgdp && !model) {
    if (checkpoint.empty()) throw ConfigError("policy egdp: no checkpoint given");
    if (!std::filesystem::exists(checkpoint)) throw ConfigError("policy egdp: checkpoint not found: " + checkpoint.string());
    model = std::make_shared<const TrainerState>(from_checkpoint(load_checkpoint(checkpoint)));
  }
  if (kind == PolicyKind::kBehaviorClone && !bc) {
    if (bc_checkpoint.empty()) throw ConfigError("policy behavior_clone: no checkpoint given");
    if (!std::filesystem::exists(bc_checkpoint)) {
      throw ConfigError("policy behavior_clone: checkpoint not found: " + bc_checkpoint.string());
    }
    bc = std::make_shared<BcModel>(bc_from_checkpoint(load_checkpoint(bc_checkpoint)));
  }
  if (plan_every == 0) throw ConfigError("policy: plan_every must be >= 1");
}

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point since) {
  return std::chrono::duration<double, std::milli>(Clock::now() - since).count();
}

std::unique_ptr<CoefficientPolicy> instantiate(const PolicySpec& spec, std::uint64_t seed) {
  switch (spec.kind) {
    case PolicyKind::kFixedBid:
      return std::make_unique<FixedBidPolicy>(spec.coefficient);
    case PolicyKind::kPid:
      return std::make_unique<PidPolicy>(spec.pid_initial, spec.pid);
    case PolicyKind::kBehaviorClone:
      return std::make_unique<BcPolicy>(spec.bc);
    case PolicyKind::kEgdp:
      return std::make_unique<EgdpPolicy>(spec.model, spec.sampler, spec.target, spec.plan_every, seed);
    case PolicyKind::kExpertOracle:
      break;
  }
  throw StateError("instantiate: expert_oracle has no step policy");
}

void fill_totals(EpisodeResult& r, const auction::ScoreConfig& score) {
  r.conversions = r.record.total_reward();
  r.cost = r.record.total_cost();
  if (r.cost <= 0.0) {
    r.cpa = 0.0;
  } else if (r.conversions <= 0.0) {
    r.cpa = std::numeric_limits<double>::infinity();
  } else {
    r.cpa = r.cost / r.conversions;
  }
  r.budget_util = r.record.budget > 0.0 ? r.cost / r.record.budget : 0.0;
  r.score = auction::compute_score(r.record, score);
}

}  // namespace

EpisodeResult run_episode(PolicySpec& spec, const auction::EnvConfig& env_cfg, std::uint64_t seed,
                          const auction::ScoreConfig& score) {
  spec.resolve();
  auction::EnvConfig cfg = env_cfg;
  cfg.seed = seed;
  cfg.validate();
  EpisodeResult out;

  if (spec.kind == PolicyKind::kExpertOracle) {
    const auto start = Clock::now();
    expert::ExpertTrajectory traj = expert::solve_and_rollout(cfg, spec.expert);
    if (spec.record_timing) out.plan_ms = elapsed_ms(start);
    out.record = std::move(traj.episode);
    fill_totals(out, score);
    return out;
  }

  if (spec.kind == PolicyKind::kEgdp && spec.model->model.cfg.horizon != cfg.num_steps) {
    throw ConfigError("policy egdp: model horizon " + std::to_string(spec.model->model.cfg.horizon) +
                      " differs from env.num_steps " + std::to_string(cfg.num_steps));
  }

  auto policy = instantiate(spec, seed);
  auction::AuctionEnv env(cfg);
  std::vector<double> coefs = auction::competitor_coefficients(cfg);
  const double initial = std::max(policy->initial_coefficient(), 0.0);
  out.record.budget = cfg.budgets.at(0);
  out.record.target_cpa = cfg.target_cpas.at(0);
  out.record.initial_state = env.initial_state(0, initial);

  std::vector<StepState> history{out.record.initial_state};
  double current = initial;
  double plan_ms = 0.0;
  for (std::size_t t = 0; t < cfg.num_steps; ++t) {
    const auto start = Clock::now();
    const double action = policy->act(history);
    if (spec.record_timing) plan_ms += elapsed_ms(start);
    if (!std::isfinite(action)) {
      throw NumericError("run_episode: " + spec.name() + " produced a non-finite action at t = " + std::to_string(t));
    }
    const double next = std::max(current + action, 0.0);
    coefs[0] = next;
    const auto res = env.step(coefs);
    const auto& me = res.agents[0];
    out.record.steps.push_back({t, me.state, next - current, me.reward, me.cost, me.wins});
    history.push_back(me.state);
    current = next;
    if (spec.kind == PolicyKind::kEgdp && (t % spec.plan_every == 0)) ++out.planning_calls;
  }
  out.plan_ms = plan_ms;
  out.denoiser_evals = policy->denoiser_evals();
  fill_totals(out, score);
  return out;
}

std::vector<double> coefficient_grid(double lo, double hi, std::size_t points) {
  if (!(lo > 0.0) || !(hi >= lo)) throw ConfigError("coefficient_grid: need 0 < grid_min <= grid_max");
  if (points == 0) throw ConfigError("coefficient_grid: grid_points must be >= 1");
  std::vector<double> grid(points);
  if (points == 1) {
    grid[0] = lo;
    return grid;
  }
  const double a = std::log(lo), b = std::log(hi);
  for (std::size_t i = 0; i < points; ++i) {
    grid[i] = std::exp(a + (b - a) * static_cast<double>(i) / static_cast<double>(points - 1));
  }
  return grid;
}

GridBest grid_best_coefficient(const auction::EnvConfig& env, const std::vector<std::uint64_t>& seeds,
                               const std::vector<double>& grid, const auction::ScoreConfig& score) {
  if (seeds.empty()) throw ConfigError("grid_best_coefficient: no seeds");
  if (grid.empty()) throw ConfigError("grid_best_coefficient: empty grid");
  GridBest best;
  best.mean_score = -std::numeric_limits<double>::infinity();
  for (double c : grid) {
    PolicySpec spec;
    spec.kind = PolicyKind::kFixedBid;
    spec.coefficient = c;
    spec.record_timing = false;
    double total = 0.0;
    for (std::uint64_t s : seeds) total += run_episode(spec, env, s, score).score;
    const double mean = total / static_cast<double>(seeds.size());
    best.mean_scores.push_back(mean);
    if (mean > best.mean_score) {
      best.mean_score = mean;
      best.coefficient = c;
    }
  }
  return best;
}

std::vector<SummaryRow> ScoreTable::summary() const {
  std::vector<SummaryRow> out;
  for (const auto& r : rows) {
    auto it = std::find_if(out.begin(), out.end(), [&](const SummaryRow& s) { return s.policy == r.policy; });
    if (it == out.end()) {
      out.push_back({r.policy, 0, 0.0, 0.0, 0.0});
      it = out.end() - 1;
    }
    ++it->episodes;
    it->mean_score += r.score;
    it->mean_denoiser_evals += static_cast<double>(r.denoiser_evals);
  }
  for (auto& s : out) {
    const double n = static_cast<double>(s.episodes);
    s.mean_score /= n;
    s.mean_denoiser_evals /= n;
    double ss = 0.0;
    for (const auto& r : rows) {
      if (r.policy == s.policy) ss += (r.score - s.mean_score) * (r.score - s.mean_score);
    }
    s.std_score = std::sqrt(ss / n);
  }
  return out;
}

const SummaryRow& ScoreTable::summary_of(const std::string& policy) const {
  thread_local std::vector<SummaryRow> cache;
  cache = summary();
  for (const auto& s : cache) {
    if (s.policy == policy) return s;
  }
  throw InputError("ScoreTable: no rows for policy '" + policy + "'");
}

std::string ScoreTable::csv() const {
  std::string out = "policy,seed,score,conversions,cost,cpa,budget_util,plan_ms,denoiser_evals\n";
  for (const auto& r : rows) {
    out += r.policy + "," + std::to_string(r.seed) + "," + format_double(r.score) + "," +
           format_double(r.conversions) + "," + format_double(r.cost) + "," + format_double(r.cpa) + "," +
           format_double(r.budget_util) + "," + format_double(r.plan_ms) + "," + std::to_string(r.denoiser_evals) +
           "\n";
  }
  return out;
}

std::string ScoreTable::summary_csv() const {
  std::string out = "policy,episodes,mean_score,std_score,mean_denoiser_evals\n";
  for (const auto& s : summary()) {
    out += s.policy + "," + std::to_string(s.episodes) + "," + format_double(s.mean_score) + "," +
           format_double(s.std_score) + "," + format_double(s.mean_denoiser_evals) + "\n";
  }
  return out;
}

ScoreTable evaluate(std::vector<PolicySpec>& policies, const auction::EnvConfig& env,
                    const std::vector<std::uint64_t>& seeds, const auction::ScoreConfig& score,
                    const std::filesystem::path& csv_path) {
  if (policies.empty()) throw ConfigError("evaluate: no policies");
  if (seeds.empty()) throw ConfigError("evaluate: no seeds");
  ScoreTable table;
  for (auto& spec : policies) {
    for (std::uint64_t seed : seeds) {
      const EpisodeResult r = run_episode(spec, env, seed, score);
      table.rows.push_back(
          {spec.name(), seed, r.score, r.conversions, r.cost, r.cpa, r.budget_util, r.plan_ms, r.denoiser_evals});
      if (!csv_path.empty()) write_file_atomic(csv_path, table.csv());
    }
  }
  return table;
}

std::vector<PolicySpec> make_policy_specs(const RunConfig& cfg, const PolicyResources& res) {
  std::vector<PolicySpec> specs;
  for (const auto& name : cfg.eval.policies) {
    PolicySpec spec;
    spec.kind = parse_policy_kind(name);
    spec.record_timing = cfg.eval.record_timing;
    spec.expert = cfg.expert;
    switch (spec.kind) {
      case PolicyKind::kFixedBid:
        spec.coefficient = cfg.eval.fixed_coefficient;
        if (spec.coefficient == 0.0) {
          spec.coefficient =
              grid_best_coefficient(cfg.env, cfg.eval.seeds,
                                    coefficient_grid(cfg.eval.grid_min, cfg.eval.grid_max, cfg.eval.grid_points),
                                    {cfg.eval.score_lambda})
                  .coefficient;
        }
        break;
      case PolicyKind::kPid:
        spec.pid = {cfg.eval.pid_kp, cfg.eval.pid_ki, cfg.eval.pid_kd};
        spec.pid_initial = cfg.eval.pid_initial > 0.0 ? cfg.eval.pid_initial : res.initial_coefficient;
        if (!(spec.pid_initial > 0.0)) throw ConfigError("eval.pid_initial: no initial coefficient available");
        break;
      case PolicyKind::kBehaviorClone:
        if (!res.bc) throw ConfigError("eval.policies: behavior_clone needs a trained model");
        spec.bc = res.bc;
        break;
      case PolicyKind::kEgdp:
        if (!res.model) throw ConfigError("eval.policies: egdp needs a checkpoint");
        spec.model = res.model;
        spec.sampler = cfg.sampler;
        spec.target = {cfg.eval.target_return, cfg.eval.target_constraint};
        spec.plan_every = cfg.eval.plan_every;
        break;
      case PolicyKind::kExpertOracle:
        break;
    }
    specs.push_back(std::move(spec));
  }
  return specs;
}

std::string SweepReport::csv() const {
  std::string out = "param,value,mean_score,std_score,denoiser_evals,evals_per_plan,checkpoint\n";
  for (const auto& r : rows) {
    out += r.param + "," + format_double(r.value) + "," + format_double(r.mean_score) + "," +
           format_double(r.std_score) + "," + format_double(r.denoiser_evals) + "," +
           std::to_string(r.evals_per_plan) + "," + r.checkpoint.generic_string() + "\n";
  }
  return out;
}

namespace {

void check_sweep_value(const std::string& param, double v) {
  if (!std::isfinite(v)) throw ConfigError("sweep: " + param + " value must be finite");
  if (param == "gamma") {
    if (v < 1.0 || v != std::floor(v)) throw ConfigError("sweep: gamma values must be integers >= 1");
  } else if (param == "delta") {
    if (v < 0.0 || v > 1.0) throw ConfigError("sweep: delta values must lie in [0, 1]");
  } else if (param == "xi") {
    if (!(v > 0.0)) throw ConfigError("sweep: xi values must be > 0");
  } else {
    throw ConfigError("sweep: parameter must be one of gamma, delta, xi (got '" + param + "')");
  }
}

std::shared_ptr<const TrainerState> train_into(const TrainConfig& tc, const data::Dataset& d,
                                               const std::filesystem::path& dir, SweepReport& report) {
  TrainOutputs out;
  out.dir = dir;
  TrainResult res = train(tc, d, out);
  report.files.insert(report.files.end(), res.files.begin(), res.files.end());
  return std::make_shared<const TrainerState>(std::move(res.state));
}

}  // namespace

SweepReport sweep(const RunConfig& cfg, const data::Dataset& d, const std::string& param,
                  const std::vector<double>& values, const std::filesystem::path& out_dir,
                  std::shared_ptr<const TrainerState> base_model) {
  if (values.empty()) throw ConfigError("sweep: empty value list");
  for (double v : values) check_sweep_value(param, v);
  SweepReport report;
  std::filesystem::path base_ckpt;
  if (param == "gamma" && !base_model) {
    base_model = train_into(cfg.train, d, out_dir / "sweep_base", report);
  }
  if (param == "gamma") base_ckpt = out_dir / "sweep_base" / "checkpoint.egdp";

  const diffusion::NoiseSchedule sched = cfg.train.schedule();
  for (double v : values) {
    RunConfig run = cfg;
    std::shared_ptr<const TrainerState> model = base_model;
    std::filesystem::path ckpt = base_ckpt;
    if (param == "gamma") {
      run.sampler.gamma = static_cast<std::size_t>(v);
    } else {
      if (param == "delta") run.train.delta = v;
      if (param == "xi") run.train.xi = v;
      const auto dir = out_dir / ("sweep_" + param + "_" + format_double(v));
      model = train_into(run.train, d, dir, report);
      ckpt = dir / "checkpoint.egdp";
    }
    PolicySpec spec;
    spec.kind = PolicyKind::kEgdp;
    spec.model = model;
    spec.sampler = run.sampler;
    spec.target = {run.eval.target_return, run.eval.target_constraint};
    spec.plan_every = run.eval.plan_every;
    spec.record_timing = false;
    std::vector<PolicySpec> specs{spec};
    const ScoreTable table = evaluate(specs, run.env, run.eval.seeds, {run.eval.score_lambda});
    const SummaryRow s = table.summary().front();
    const auto eff = effective_sampler(*model, run.sampler);
    report.rows.push_back({param, v, s.mean_score, s.std_score, s.mean_denoiser_evals,
                           2 * diffusion::step_ladder(sched.K, eff.gamma).size(), ckpt});
  }
  return report;
}

}  // namespace egdp::eval
