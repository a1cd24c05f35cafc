#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "egdp/layers.hpp"

namespace egdp::invdyn {

struct InvDynConfig {
  std::size_t history = 4;  // h
  std::size_t hidden = 64;
  std::size_t state_dim = 8;

  std::size_t window_rows() const noexcept { return history + 1; }
  std::size_t input_dim() const noexcept { return (history + 2) * state_dim; }
  void validate() const;
};

// 2-layer MLP over the flattened window s_{t-h..t} followed by s'_{t+1}.
struct InverseDynamics {
  InvDynConfig cfg;
  Mlp2 mlp;

  static InverseDynamics create(ParamStore& params, const InvDynConfig& cfg, Rng& rng,
                                const std::string& prefix = "psi");

  // inputs: B x input_dim, one flattened (window, next) per row -> B x 1.
  ad::Var forward(Graph& g, ad::Var inputs) const;
  double predict(ParamStore& params, const Tensor& window, const Tensor& next) const;
};

// Rows s_{t-h} .. s_t taken from `states` (s_0 first), padding with s_0 for
// indices below 0. states must hold at least t + 1 rows.
Tensor window(const Tensor& states, std::size_t t, std::size_t h);

// window (h+1 rows) followed by next, flattened into one row.
std::vector<double> flatten_input(const Tensor& window, const Tensor& next);

// Executed next coefficient b_t + a, floored at 0.
inline double next_coefficient(double current, double action) { return current + action > 0.0 ? current + action : 0.0; }

// Mean squared action error over a batch.
ad::Var inv_loss(Graph& g, const InverseDynamics& net, const Tensor& inputs, const Tensor& actions);

}  // namespace egdp::invdyn
