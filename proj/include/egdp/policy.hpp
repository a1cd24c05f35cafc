#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "egdp/auction.hpp"
#include "egdp/checkpoint.hpp"
#include "egdp/dataset.hpp"
#include "egdp/diffusion.hpp"
#include "egdp/layers.hpp"
#include "egdp/trainer.hpp"

namespace egdp::eval {

enum class PolicyKind { kEgdp, kFixedBid, kPid, kBehaviorClone, kExpertOracle };

PolicyKind parse_policy_kind(const std::string& name);
std::string policy_name(PolicyKind kind);

// Controls the bid coefficient of agent 0 one step at a time.
class CoefficientPolicy {
 public:
  virtual ~CoefficientPolicy() = default;
  virtual double initial_coefficient() const = 0;
  // states holds s_0 .. s_t (raw). Returns a_t, the change of coefficient.
  virtual double act(const std::vector<auction::StepState>& states) = 0;
  virtual std::size_t denoiser_evals() const { return 0; }
};

class FixedBidPolicy final : public CoefficientPolicy {
 public:
  explicit FixedBidPolicy(double coefficient) : coef_(coefficient) {}
  double initial_coefficient() const override { return coef_; }
  double act(const std::vector<auction::StepState>&) override { return 0.0; }

 private:
  double coef_;
};

struct PidGains {
  double kp = 1.0;
  double ki = 0.1;
  double kd = 0.0;
};

// Budget pacing on the log coefficient: the error is the spent budget
// fraction minus the elapsed time fraction.
class PidPolicy final : public CoefficientPolicy {
 public:
  PidPolicy(double initial, PidGains gains) : initial_(initial), gains_(gains) {}
  double initial_coefficient() const override { return initial_; }
  double act(const std::vector<auction::StepState>& states) override;

 private:
  double initial_;
  PidGains gains_;
  double integral_ = 0.0;
  double previous_error_ = 0.0;
};

// Behavior cloning: MLP from the normalized state window to the action.
struct BcModel {
  std::size_t history = 4;
  std::size_t state_dim = auction::StepState::kDim;
  data::NormStats stats;
  double initial_coefficient = 0.0;
  ParamStore params;
  Mlp2 mlp;

  static BcModel create(std::size_t history, std::size_t hidden, const data::Dataset& d, std::uint64_t seed);
  double predict(const Tensor& normalized_window);
};

BcModel train_bc(const data::Dataset& d, std::size_t steps, std::size_t hidden, std::size_t history,
                 std::uint64_t seed, std::vector<double>* losses = nullptr);
Checkpoint bc_to_checkpoint(const BcModel& m);
BcModel bc_from_checkpoint(const Checkpoint& ck);

class BcPolicy final : public CoefficientPolicy {
 public:
  explicit BcPolicy(std::shared_ptr<BcModel> model) : model_(std::move(model)) {}
  double initial_coefficient() const override { return model_->initial_coefficient; }
  double act(const std::vector<auction::StepState>& states) override;

 private:
  std::shared_ptr<BcModel> model_;
};

struct PlanTarget {
  double ret = 1.0;         // f(R)
  double constraint = 1.0;  // f'(C)
};

struct PlanInfo {
  Tensor trajectory;        // normalized T x D_s plan, rows [0, t) equal to history
  Tensor next_state;        // normalized s'_{t+1}
  std::size_t denoiser_evals = 0;
};

// Effective sampler settings of a trained model: force_gamma_1 pins gamma to 1.
diffusion::SamplerConfig effective_sampler(const TrainerState& model, diffusion::SamplerConfig cfg);

// One planning call: draw the pseudo-expert from the prior, reverse-sample
// the trajectory with the true history inpainted, read s'_{t+1} and map
// (s_{t-h..t}, s'_{t+1}) to an action. `states` holds raw s_0 .. s_t.
double plan_step(const TrainerState& model, const std::vector<auction::StepState>& states, const PlanTarget& target,
                 const diffusion::SamplerConfig& sampler, Rng& rng, PlanInfo* info = nullptr);

class EgdpPolicy final : public CoefficientPolicy {
 public:
  EgdpPolicy(std::shared_ptr<const TrainerState> model, diffusion::SamplerConfig sampler, PlanTarget target,
             std::size_t plan_every, std::uint64_t episode_seed);
  double initial_coefficient() const override { return model_->meta.initial_coefficient; }
  double act(const std::vector<auction::StepState>& states) override;
  std::size_t denoiser_evals() const override { return evals_; }

 private:
  std::shared_ptr<const TrainerState> model_;
  diffusion::SamplerConfig sampler_;
  PlanTarget target_;
  std::size_t plan_every_;
  Rng rng_;
  Tensor plan_;
  std::size_t evals_ = 0;
};

}  // namespace egdp::eval
