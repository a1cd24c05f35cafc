#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "egdp/checkpoint.hpp"
#include "egdp/config.hpp"
#include "egdp/dataset.hpp"
#include "egdp/model.hpp"
#include "egdp/params.hpp"
#include "egdp/rng.hpp"

namespace egdp {

struct LossReport {
  double ddpm = 0.0;
  double exp = 0.0;
  double inv = 0.0;
  double total = 0.0;
};

// Dataset facts a trained model needs at inference time.
struct DatasetMeta {
  data::NormStats stats;
  double return_min = 0.0;
  double return_max = 0.0;
  double initial_coefficient = 0.0;

  static DatasetMeta from(const data::Dataset& d);
};

struct TrainerState {
  TrainConfig cfg;
  DatasetMeta meta;
  EgdpModel model;
  Adam adam;
  Rng rng;
  std::size_t step = 0;
  std::vector<LossReport> history;

  // Model initialized from cfg.seed, shapes taken from the dataset.
  static TrainerState init(const TrainConfig& cfg, const data::Dataset& d);
};

// One pass of the training algorithm on a freshly drawn batch: blend, build
// the condition, sample k and history length per item, predict x0, form
// L_ddpm + xi (L_exp + L_inv) and take one Adam step.
LossReport train_step(TrainerState& st, const data::Dataset& d);

// Gradient of L_total on a fixed batch without an optimizer step; used by
// the gradient checks. `seed` fixes every random draw.
ad::Var total_loss_graph(Graph& g, const EgdpModel& model, const TrainConfig& cfg, const data::Dataset& d,
                         std::uint64_t seed, LossReport* report = nullptr);

struct TrainOutputs {
  std::filesystem::path dir;  // empty: keep everything in memory
  std::string checkpoint_name = "checkpoint.egdp";
  std::string loss_name = "losses.csv";
};

struct TrainResult {
  TrainerState state;
  bool early_stopped = false;
  std::vector<std::filesystem::path> files;
};

// Runs until cfg.steps (or a plateau when early_stop is set). Writes the
// checkpoint every checkpoint_every steps and at the end, plus the loss CSV.
// A non-finite loss aborts with NumericError and leaves the last checkpoint.
TrainResult train(TrainerState state, const data::Dataset& d, const TrainOutputs& out = {});
TrainResult train(const TrainConfig& cfg, const data::Dataset& d, const TrainOutputs& out = {});

Checkpoint to_checkpoint(const TrainerState& st);
TrainerState from_checkpoint(const Checkpoint& ckpt);

std::string loss_csv(const std::vector<LossReport>& history);

}  // namespace egdp
