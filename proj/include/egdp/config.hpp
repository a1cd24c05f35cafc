#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "egdp/auction.hpp"
#include "egdp/dataset.hpp"
#include "egdp/diffusion.hpp"
#include "egdp/expert.hpp"
#include "egdp/model.hpp"

namespace egdp {

struct TrainConfig {
  double xi = 1.0;
  double delta = 0.4;
  std::size_t gamma = 4;  // inference stride recorded with the model
  std::size_t K = 32;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  bool scaled_schedule = true;  // rescale betas by 1000 / K
  double lr = 1e-3;
  std::size_t batch_size = 32;
  std::size_t inv_batch_size = 256;  // (window, action) pairs per step for L_inv
  std::size_t steps = 3000;
  double p_uncond = 0.1;
  bool disable_blend = false;       // "w/o BF."
  bool disable_cross_attn = false;  // "w/o CA."
  bool force_gamma_1 = false;       // "w/o Acc."
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 500;
  bool early_stop = true;
  double plateau_tolerance = 0.0;
  ModelConfig model;
  data::DataGenConfig data;

  void validate() const;
  diffusion::NoiseSchedule schedule() const;
};

struct EvalConfig {
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  std::vector<std::string> policies = {"egdp", "fixed_bid", "pid", "behavior_clone", "expert_oracle"};
  double fixed_coefficient = 0.0;  // 0 selects the grid-best coefficient
  std::size_t grid_points = 50;
  double grid_min = 0.05;
  double grid_max = 5.0;
  double pid_kp = 1.0;
  double pid_ki = 0.1;
  double pid_kd = 0.0;
  double pid_initial = 0.0;  // 0 uses the dataset's initial coefficient
  std::size_t plan_every = 1;
  bool record_timing = true;
  double target_return = 1.0;
  double target_constraint = 1.0;
  std::size_t bc_steps = 2000;
  std::size_t bc_hidden = 64;
  double score_lambda = 2.0;
  std::string sweep_param;
  std::vector<double> sweep_values;

  void validate() const;
};

struct RunConfig {
  auction::EnvConfig env;
  expert::DualSolverOptions expert;
  TrainConfig train;
  diffusion::SamplerConfig sampler;
  EvalConfig eval;

  void validate() const;
};

// The synthetic benchmark: 8 agents, T = 48, 200 impressions per step.
auction::EnvConfig benchmark_env();
RunConfig default_run_config();

// Strict parsing: unknown sections or keys raise ConfigError naming the key.
RunConfig parse_run_config(const nlohmann::json& doc);
RunConfig load_run_config(const std::filesystem::path& path);
nlohmann::json to_json(const RunConfig& cfg);

nlohmann::json to_json(const auction::EnvConfig& cfg);
nlohmann::json to_json(const TrainConfig& cfg);
nlohmann::json to_json(const ModelConfig& cfg);
nlohmann::json to_json(const diffusion::SamplerConfig& cfg);
nlohmann::json to_json(const EvalConfig& cfg);
nlohmann::json to_json(const expert::DualSolverOptions& cfg);
auction::EnvConfig env_from_json(const nlohmann::json& j, auction::EnvConfig base);
TrainConfig train_from_json(const nlohmann::json& j, TrainConfig base);
ModelConfig model_from_json(const nlohmann::json& j, ModelConfig base);
diffusion::SamplerConfig sampler_from_json(const nlohmann::json& j, diffusion::SamplerConfig base);
EvalConfig eval_from_json(const nlohmann::json& j, EvalConfig base);
expert::DualSolverOptions expert_from_json(const nlohmann::json& j, expert::DualSolverOptions base);

}  // namespace egdp
