#include "egdp/config.hpp"

#include <cmath>
#include <fstream>
#include <set>

#include "egdp/error.hpp"

namespace egdp {

using nlohmann::json;

namespace {

// Integer literals parse as unsigned, integers built in code as signed.
bool is_count(const json& v) {
  return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
}

// Reads declared keys from one JSON object and rejects the rest.
class Reader {
 public:
  Reader(const json& j, std::string section) : j_(j), section_(std::move(section)) {
    if (!j_.is_object()) throw ConfigError(section_ + ": must be a JSON object");
  }

  void get(const char* key, double& out) {
    if (const json* v = find(key)) {
      if (!v->is_number()) fail(key, "expected a number");
      out = v->get<double>();
    }
  }
  void get(const char* key, std::size_t& out) {
    if (const json* v = find(key)) {
      if (!is_count(*v)) fail(key, "expected a non-negative integer");
      out = v->get<std::size_t>();
    }
  }
  void get(const char* key, std::uint64_t& out, int) {
    if (const json* v = find(key)) {
      if (!is_count(*v)) fail(key, "expected a non-negative integer");
      out = v->get<std::uint64_t>();
    }
  }
  void get(const char* key, bool& out) {
    if (const json* v = find(key)) {
      if (!v->is_boolean()) fail(key, "expected true or false");
      out = v->get<bool>();
    }
  }
  void get(const char* key, std::string& out) {
    if (const json* v = find(key)) {
      if (!v->is_string()) fail(key, "expected a string");
      out = v->get<std::string>();
    }
  }
  void get(const char* key, std::vector<std::uint64_t>& out) {
    if (const json* v = find(key)) {
      if (!v->is_array()) fail(key, "expected an array of non-negative integers");
      out.clear();
      for (const auto& e : *v) {
        if (!is_count(e)) fail(key, "expected an array of non-negative integers");
        out.push_back(e.get<std::uint64_t>());
      }
    }
  }
  void get(const char* key, std::vector<double>& out) {
    if (const json* v = find(key)) {
      if (!v->is_array()) fail(key, "expected an array of numbers");
      out.clear();
      for (const auto& e : *v) {
        if (!e.is_number()) fail(key, "expected an array of numbers");
        out.push_back(e.get<double>());
      }
    }
  }
  void get(const char* key, std::vector<std::string>& out) {
    if (const json* v = find(key)) {
      if (!v->is_array()) fail(key, "expected an array of strings");
      out.clear();
      for (const auto& e : *v) {
        if (!e.is_string()) fail(key, "expected an array of strings");
        out.push_back(e.get<std::string>());
      }
    }
  }
  const json* object(const char* key) {
    const json* v = find(key);
    if (v && !v->is_object()) fail(key, "expected an object");
    return v;
  }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (!seen_.count(item.key())) throw ConfigError(section_ + "." + item.key() + ": unknown key");
    }
  }

  const std::string& section() const noexcept { return section_; }

 private:
  const json* find(const char* key) {
    seen_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }
  [[noreturn]] void fail(const char* key, const std::string& why) const {
    throw ConfigError(section_ + "." + key + ": " + why);
  }

  const json& j_;
  std::string section_;
  std::set<std::string> seen_;
};

data::DataGenConfig data_from_json(const json& j, data::DataGenConfig c) {
  Reader r(j, "train.data");
  r.get("num_seeds", c.num_seeds);
  r.get("episodes_per_seed", c.episodes_per_seed);
  r.get("noisy_expert_fraction", c.noisy_expert_fraction);
  r.get("coef_min", c.coef_min);
  r.get("coef_max", c.coef_max);
  r.get("walk_sigma", c.walk_sigma);
  r.get("walk_reversion", c.walk_reversion);
  r.get("noise_scale_max", c.noise_scale_max);
  r.get("seed", c.seed, 0);
  r.get("env_seed_offset", c.env_seed_offset, 0);
  r.finish();
  return c;
}

json to_json(const data::DataGenConfig& c) {
  return {{"num_seeds", c.num_seeds},         {"episodes_per_seed", c.episodes_per_seed},
          {"noisy_expert_fraction", c.noisy_expert_fraction},
          {"coef_min", c.coef_min},           {"coef_max", c.coef_max},
          {"walk_sigma", c.walk_sigma},       {"walk_reversion", c.walk_reversion},
          {"noise_scale_max", c.noise_scale_max},
          {"seed", c.seed},                   {"env_seed_offset", c.env_seed_offset}};
}

void require(bool ok, const std::string& field, const std::string& why) {
  if (!ok) throw ConfigError(field + ": " + why);
}

}  // namespace

void TrainConfig::validate() const {
  require(xi >= 0.0 && std::isfinite(xi), "train.xi", "must be finite and >= 0");
  require(delta >= 0.0 && delta <= 1.0, "train.delta", "must lie in [0, 1]");
  require(gamma >= 1, "train.gamma", "must be >= 1");
  require(K >= 1, "train.K", "must be >= 1");
  require(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0, "train.beta_start",
          "need 0 < beta_start <= beta_end < 1");
  require(lr > 0.0 && std::isfinite(lr), "train.lr", "must be > 0");
  require(batch_size >= 1, "train.batch_size", "must be >= 1");
  require(inv_batch_size >= 1, "train.inv_batch_size", "must be >= 1");
  require(p_uncond >= 0.0 && p_uncond <= 1.0, "train.p_uncond", "must lie in [0, 1]");
  require(checkpoint_every >= 1, "train.checkpoint_every", "must be >= 1");
  require(plateau_tolerance >= 0.0, "train.plateau_tolerance", "must be >= 0");
  data.validate();
}

diffusion::NoiseSchedule TrainConfig::schedule() const {
  return scaled_schedule ? diffusion::make_scaled_schedule(K, beta_start, beta_end)
                         : diffusion::make_schedule(K, beta_start, beta_end);
}

void EvalConfig::validate() const {
  require(!seeds.empty(), "eval.seeds", "need at least one seed");
  require(!policies.empty(), "eval.policies", "need at least one policy");
  static const std::set<std::string> kinds = {"egdp", "fixed_bid", "pid", "behavior_clone", "expert_oracle"};
  for (const auto& p : policies) require(kinds.count(p) != 0, "eval.policies", "unknown policy '" + p + "'");
  require(fixed_coefficient >= 0.0, "eval.fixed_coefficient", "must be >= 0");
  require(grid_points >= 1, "eval.grid_points", "must be >= 1");
  require(grid_min > 0.0 && grid_max >= grid_min, "eval.grid_min", "need 0 < grid_min <= grid_max");
  require(pid_initial >= 0.0, "eval.pid_initial", "must be >= 0");
  require(plan_every >= 1, "eval.plan_every", "must be >= 1");
  require(target_return >= 0.0 && target_return <= 1.0, "eval.target_return", "must lie in [0, 1]");
  require(target_constraint >= 0.0 && target_constraint <= 1.0, "eval.target_constraint", "must lie in [0, 1]");
  require(bc_hidden >= 1, "eval.bc_hidden", "must be >= 1");
  require(score_lambda > 0.0, "eval.score_lambda", "must be > 0");
  if (!sweep_param.empty()) {
    require(sweep_param == "gamma" || sweep_param == "delta" || sweep_param == "xi", "eval.sweep_param",
            "must be one of gamma, delta, xi");
  }
}

void RunConfig::validate() const {
  env.validate();
  train.validate();
  sampler.validate();
  eval.validate();
  require(expert.grid_points >= 2, "expert.grid_points", "must be >= 2");
  require(expert.alpha_min > 0.0 && expert.alpha_max > expert.alpha_min, "expert.alpha_min",
          "need 0 < alpha_min < alpha_max");
  require(expert.rel_tol > 0.0, "expert.rel_tol", "must be > 0");
  require(expert.slack_fraction > 0.0 && expert.slack_fraction <= 1.0, "expert.slack_fraction", "must lie in (0, 1]");
}

auction::EnvConfig benchmark_env() {
  auction::EnvConfig e;
  e.num_agents = 8;
  e.num_steps = 48;
  e.impressions_per_step = 200;
  e.set_agents(300.0, 60.0, 1e6, 100.0);
  e.market_level_min = 0.5;
  e.market_level_max = 2.0;
  e.competitor_spread = 0.2;
  e.reward_mode = auction::RewardMode::kExpected;
  return e;
}

RunConfig default_run_config() {
  RunConfig c;
  c.env = benchmark_env();
  c.train.model.horizon = c.env.num_steps;
  return c;
}

json to_json(const auction::EnvConfig& e) {
  return {{"num_agents", e.num_agents},
          {"num_steps", e.num_steps},
          {"impressions_per_step", e.impressions_per_step},
          {"controlled_budget", e.budgets.empty() ? 0.0 : e.budgets[0]},
          {"controlled_cpa", e.target_cpas.empty() ? 0.0 : e.target_cpas[0]},
          {"competitor_budget", e.budgets.size() > 1 ? e.budgets[1] : 0.0},
          {"competitor_cpa", e.target_cpas.size() > 1 ? e.target_cpas[1] : 0.0},
          {"value_mu", e.value_distribution.mu},
          {"value_sigma", e.value_distribution.sigma},
          {"exposure_prob", e.exposure_prob},
          {"conversion_scaling", e.conversion_scaling},
          {"market_level_min", e.market_level_min},
          {"market_level_max", e.market_level_max},
          {"competitor_spread", e.competitor_spread},
          {"reward_mode", e.reward_mode == auction::RewardMode::kExpected ? "expected" : "stochastic"},
          {"state_window", e.state_window},
          {"seed", e.seed}};
}

auction::EnvConfig env_from_json(const json& j, auction::EnvConfig e) {
  Reader r(j, "env");
  r.get("num_agents", e.num_agents);
  r.get("num_steps", e.num_steps);
  r.get("impressions_per_step", e.impressions_per_step);
  double cb = e.budgets.empty() ? 0.0 : e.budgets[0];
  double cc = e.target_cpas.empty() ? 1.0 : e.target_cpas[0];
  double ob = e.budgets.size() > 1 ? e.budgets[1] : 1e6;
  double oc = e.target_cpas.size() > 1 ? e.target_cpas[1] : 100.0;
  r.get("controlled_budget", cb);
  r.get("controlled_cpa", cc);
  r.get("competitor_budget", ob);
  r.get("competitor_cpa", oc);
  r.get("value_mu", e.value_distribution.mu);
  r.get("value_sigma", e.value_distribution.sigma);
  r.get("exposure_prob", e.exposure_prob);
  r.get("conversion_scaling", e.conversion_scaling);
  r.get("market_level_min", e.market_level_min);
  r.get("market_level_max", e.market_level_max);
  r.get("competitor_spread", e.competitor_spread);
  std::string mode = e.reward_mode == auction::RewardMode::kExpected ? "expected" : "stochastic";
  r.get("reward_mode", mode);
  if (mode == "expected") {
    e.reward_mode = auction::RewardMode::kExpected;
  } else if (mode == "stochastic") {
    e.reward_mode = auction::RewardMode::kStochastic;
  } else {
    throw ConfigError("env.reward_mode: must be \"expected\" or \"stochastic\"");
  }
  r.get("state_window", e.state_window);
  r.get("seed", e.seed, 0);
  r.finish();
  e.set_agents(cb, cc, ob, oc);
  return e;
}

json to_json(const ModelConfig& m) {
  return {{"horizon", m.horizon},       {"state_dim", m.state_dim},   {"model_dim", m.model_dim},
          {"heads", m.heads},           {"ffn_mult", m.ffn_mult},     {"depth", m.depth},
          {"latent_dim", m.latent_dim}, {"inv_history", m.inv_history}, {"inv_hidden", m.inv_hidden},
          {"use_cross_attention", m.use_cross_attention}};
}

ModelConfig model_from_json(const json& j, ModelConfig m) {
  Reader r(j, "train.model");
  r.get("horizon", m.horizon);
  r.get("state_dim", m.state_dim);
  r.get("model_dim", m.model_dim);
  r.get("heads", m.heads);
  r.get("ffn_mult", m.ffn_mult);
  r.get("depth", m.depth);
  r.get("latent_dim", m.latent_dim);
  r.get("inv_history", m.inv_history);
  r.get("inv_hidden", m.inv_hidden);
  r.get("use_cross_attention", m.use_cross_attention);
  r.finish();
  return m;
}

json to_json(const TrainConfig& t) {
  return {{"xi", t.xi},
          {"delta", t.delta},
          {"gamma", t.gamma},
          {"K", t.K},
          {"beta_start", t.beta_start},
          {"beta_end", t.beta_end},
          {"scaled_schedule", t.scaled_schedule},
          {"lr", t.lr},
          {"batch_size", t.batch_size},
          {"inv_batch_size", t.inv_batch_size},
          {"steps", t.steps},
          {"p_uncond", t.p_uncond},
          {"disable_blend", t.disable_blend},
          {"disable_cross_attn", t.disable_cross_attn},
          {"force_gamma_1", t.force_gamma_1},
          {"seed", t.seed},
          {"checkpoint_every", t.checkpoint_every},
          {"early_stop", t.early_stop},
          {"plateau_tolerance", t.plateau_tolerance},
          {"model", to_json(t.model)},
          {"data", to_json(t.data)}};
}

TrainConfig train_from_json(const json& j, TrainConfig t) {
  Reader r(j, "train");
  r.get("xi", t.xi);
  r.get("delta", t.delta);
  r.get("gamma", t.gamma);
  r.get("K", t.K);
  r.get("beta_start", t.beta_start);
  r.get("beta_end", t.beta_end);
  r.get("scaled_schedule", t.scaled_schedule);
  r.get("lr", t.lr);
  r.get("batch_size", t.batch_size);
  r.get("inv_batch_size", t.inv_batch_size);
  r.get("steps", t.steps);
  r.get("p_uncond", t.p_uncond);
  r.get("disable_blend", t.disable_blend);
  r.get("disable_cross_attn", t.disable_cross_attn);
  r.get("force_gamma_1", t.force_gamma_1);
  r.get("seed", t.seed, 0);
  r.get("checkpoint_every", t.checkpoint_every);
  r.get("early_stop", t.early_stop);
  r.get("plateau_tolerance", t.plateau_tolerance);
  if (const json* m = r.object("model")) t.model = model_from_json(*m, t.model);
  if (const json* d = r.object("data")) t.data = data_from_json(*d, t.data);
  r.finish();
  return t;
}

json to_json(const diffusion::SamplerConfig& s) {
  return {{"gamma", s.gamma}, {"omega", s.omega}, {"temperature", s.temperature}, {"seed", s.seed}};
}

diffusion::SamplerConfig sampler_from_json(const json& j, diffusion::SamplerConfig s) {
  Reader r(j, "sampler");
  r.get("gamma", s.gamma);
  r.get("omega", s.omega);
  r.get("temperature", s.temperature);
  r.get("seed", s.seed, 0);
  r.finish();
  return s;
}

json to_json(const EvalConfig& e) {
  return {{"seeds", e.seeds},
          {"policies", e.policies},
          {"fixed_coefficient", e.fixed_coefficient},
          {"grid_points", e.grid_points},
          {"grid_min", e.grid_min},
          {"grid_max", e.grid_max},
          {"pid_kp", e.pid_kp},
          {"pid_ki", e.pid_ki},
          {"pid_kd", e.pid_kd},
          {"pid_initial", e.pid_initial},
          {"plan_every", e.plan_every},
          {"record_timing", e.record_timing},
          {"target_return", e.target_return},
          {"target_constraint", e.target_constraint},
          {"bc_steps", e.bc_steps},
          {"bc_hidden", e.bc_hidden},
          {"score_lambda", e.score_lambda},
          {"sweep_param", e.sweep_param},
          {"sweep_values", e.sweep_values}};
}

EvalConfig eval_from_json(const json& j, EvalConfig e) {
  Reader r(j, "eval");
  r.get("seeds", e.seeds);
  r.get("policies", e.policies);
  r.get("fixed_coefficient", e.fixed_coefficient);
  r.get("grid_points", e.grid_points);
  r.get("grid_min", e.grid_min);
  r.get("grid_max", e.grid_max);
  r.get("pid_kp", e.pid_kp);
  r.get("pid_ki", e.pid_ki);
  r.get("pid_kd", e.pid_kd);
  r.get("pid_initial", e.pid_initial);
  r.get("plan_every", e.plan_every);
  r.get("record_timing", e.record_timing);
  r.get("target_return", e.target_return);
  r.get("target_constraint", e.target_constraint);
  r.get("bc_steps", e.bc_steps);
  r.get("bc_hidden", e.bc_hidden);
  r.get("score_lambda", e.score_lambda);
  r.get("sweep_param", e.sweep_param);
  r.get("sweep_values", e.sweep_values);
  r.finish();
  return e;
}

json to_json(const expert::DualSolverOptions& o) {
  return {{"grid_points", o.grid_points},
          {"alpha_min", o.alpha_min},
          {"alpha_max", o.alpha_max},
          {"rel_tol", o.rel_tol},
          {"slack_fraction", o.slack_fraction}};
}

expert::DualSolverOptions expert_from_json(const json& j, expert::DualSolverOptions o) {
  Reader r(j, "expert");
  r.get("grid_points", o.grid_points);
  r.get("alpha_min", o.alpha_min);
  r.get("alpha_max", o.alpha_max);
  r.get("rel_tol", o.rel_tol);
  r.get("slack_fraction", o.slack_fraction);
  r.finish();
  return o;
}

RunConfig parse_run_config(const json& doc) {
  RunConfig c = default_run_config();
  Reader r(doc, "config");
  if (const json* j = r.object("env")) c.env = env_from_json(*j, c.env);
  if (const json* j = r.object("expert")) c.expert = expert_from_json(*j, c.expert);
  const bool horizon_given = doc.contains("train") && doc["train"].is_object() && doc["train"].contains("model") &&
                             doc["train"]["model"].is_object() && doc["train"]["model"].contains("horizon");
  if (const json* j = r.object("train")) c.train = train_from_json(*j, c.train);
  if (const json* j = r.object("sampler")) c.sampler = sampler_from_json(*j, c.sampler);
  if (const json* j = r.object("eval")) c.eval = eval_from_json(*j, c.eval);
  r.finish();
  if (!horizon_given) c.train.model.horizon = c.env.num_steps;
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("--config: cannot open " + path.string());
  json doc;
  try {
    doc = json::parse(is);
  } catch (const json::exception& e) {
    throw ConfigError("--config: " + path.string() + " is not valid JSON (" + e.what() + ")");
  }
  return parse_run_config(doc);
}

json to_json(const RunConfig& c) {
  return {{"env", to_json(c.env)},
          {"expert", to_json(c.expert)},
          {"train", to_json(c.train)},
          {"sampler", to_json(c.sampler)},
          {"eval", to_json(c.eval)}};
}

}  // namespace egdp
