#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "egdp/auction.hpp"
#include "egdp/expert.hpp"
#include "egdp/tensor.hpp"

namespace egdp::data {

// Per-feature min-max map onto [-1, 1]. A feature with zero range maps to 0.
struct NormStats {
  std::vector<double> min;
  std::vector<double> max;

  static NormStats fit(const std::vector<const Tensor*>& blocks);
  double normalize(std::size_t feature, double x) const;
  double denormalize(std::size_t feature, double y) const;
  Tensor normalize(const Tensor& x) const;
  Tensor denormalize(const Tensor& y) const;
};

// f(R): min-max over the training returns, 0.5 when the range is degenerate.
double return_label(double ret, double ret_min, double ret_max);
// f'(C): min(target / realized CPA, 1); zero conversions map to 0.
double constraint_label(double target_cpa, double cost, double conversions);

// Raw rows of an episode: s_0 then the T post-step states.
Tensor states_with_initial(const auction::EpisodeRecord& ep);
// The T post-step states s_1..s_T.
Tensor states_of(const auction::EpisodeRecord& ep);

struct Dataset {
  std::size_t horizon = 0;
  std::size_t state_dim = auction::StepState::kDim;
  std::vector<auction::EpisodeRecord> episodes;
  std::vector<std::size_t> expert_of;  // episode -> experts index
  std::vector<auction::EpisodeRecord> experts;
  NormStats stats;
  double return_min = 0.0;
  double return_max = 0.0;
  // Starting coefficient for planners: mean s_0 coefficient of the experts.
  double initial_coefficient = 0.0;

  // Derived, normalized views.
  std::vector<Tensor> states;         // T x D_s, s_1..s_T
  std::vector<Tensor> full_states;    // (T+1) x D_s, s_0..s_T
  std::vector<Tensor> expert_states;  // T x D_s
  std::vector<double> returns;        // R(tau), raw
  std::vector<double> f_return;
  std::vector<double> f_constraint;

  std::size_t size() const noexcept { return episodes.size(); }
};

// Every episode must have the same length; expert_of indexes `experts`.
Dataset build_dataset(std::vector<auction::EpisodeRecord> episodes, std::vector<std::size_t> expert_of,
                      std::vector<auction::EpisodeRecord> experts);

// Behavior data: for each training seed an expert episode plus a mix of
// random constant-coefficient episodes and noisy-expert episodes whose
// coefficient follows the expert's under a multiplicative random walk.
struct DataGenConfig {
  std::size_t num_seeds = 32;
  std::size_t episodes_per_seed = 8;
  double noisy_expert_fraction = 0.5;
  double coef_min = 0.15;    // constant policies draw log-uniformly from
  double coef_max = 1.5;     // [coef_min, coef_max]
  double walk_sigma = 0.1;   // per-step log-scale noise of noisy experts
  double walk_reversion = 0.0;  // per-step pull of the log-offset toward the expert, in [0, 1]
  double noise_scale_max = 0.5;  // initial log-offset range of noisy experts
  std::uint64_t seed = 0;
  std::uint64_t env_seed_offset = 1000000;  // training env seeds start here

  void validate() const;
};

struct GeneratedData {
  std::vector<auction::EpisodeRecord> episodes;
  std::vector<std::size_t> expert_of;
  std::vector<auction::EpisodeRecord> experts;
  std::vector<expert::DualMultipliers> duals;
};

GeneratedData generate(const auction::EnvConfig& env, const DataGenConfig& cfg,
                       const expert::DualSolverOptions& solver = {});

// Plays per-step coefficients for the controlled agent; competitors bid
// their seeded constant coefficients.
auction::EpisodeRecord play_coefficients(const auction::EnvConfig& env, double initial_coefficient,
                                         const std::vector<double>& coefficients);

}  // namespace egdp::data
