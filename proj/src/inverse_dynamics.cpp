#include "egdp/inverse_dynamics.hpp"

#include "egdp/error.hpp"

namespace egdp::invdyn {

void InvDynConfig::validate() const {
  if (history == 0) throw ConfigError("invdyn.history: must be >= 1");
  if (hidden == 0) throw ConfigError("invdyn.hidden: must be >= 1");
  if (state_dim == 0) throw ConfigError("invdyn.state_dim: must be >= 1");
}

InverseDynamics InverseDynamics::create(ParamStore& params, const InvDynConfig& cfg, Rng& rng,
                                        const std::string& prefix) {
  cfg.validate();
  InverseDynamics n;
  n.cfg = cfg;
  n.mlp = Mlp2::create(params, prefix + "/mlp", cfg.input_dim(), cfg.hidden, 1, rng);
  return n;
}

ad::Var InverseDynamics::forward(Graph& g, ad::Var inputs) const { return mlp(g, inputs); }

double InverseDynamics::predict(ParamStore& params, const Tensor& win, const Tensor& next) const {
  if (win.rows() != cfg.window_rows() || win.cols() != cfg.state_dim || next.size() != cfg.state_dim) {
    throw ShapeError("inverse dynamics: window " + win.shape_str() + " / next " + next.shape_str() +
                     " do not match h=" + std::to_string(cfg.history) + ", D_s=" + std::to_string(cfg.state_dim));
  }
  const auto row = flatten_input(win, next);
  ad::Tape tape(false);
  Graph g(tape, params);
  return forward(g, g.constant(Tensor::row_vector(row))).value()[0];
}

Tensor window(const Tensor& states, std::size_t t, std::size_t h) {
  if (t >= states.rows()) {
    throw ShapeError("window: step " + std::to_string(t) + " beyond " + std::to_string(states.rows()) + " states");
  }
  const std::size_t D = states.cols();
  Tensor out(h + 1, D);
  for (std::size_t r = 0; r <= h; ++r) {
    const std::size_t src = t + r >= h ? t + r - h : 0;
    for (std::size_t j = 0; j < D; ++j) out(r, j) = states(src, j);
  }
  return out;
}

std::vector<double> flatten_input(const Tensor& win, const Tensor& next) {
  std::vector<double> row(win.data().begin(), win.data().end());
  row.insert(row.end(), next.data().begin(), next.data().end());
  return row;
}

ad::Var inv_loss(Graph& g, const InverseDynamics& net, const Tensor& inputs, const Tensor& actions) {
  if (actions.size() != inputs.rows()) throw ShapeError("inv_loss: one action per input row required");
  Tensor a = actions;
  a.reshape({inputs.rows(), 1});
  return ad::mse(net.forward(g, g.constant(inputs)), g.constant(std::move(a)));
}

}  // namespace egdp::invdyn
