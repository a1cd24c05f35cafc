#include <gtest/gtest.h>

#include <cmath>

#include "egdp/error.hpp"
#include "egdp/inverse_dynamics.hpp"
#include "support.hpp"

using namespace egdp;
using namespace egdp::invdyn;
using egdp::testing::random_tensor;

namespace {

struct Net {
  ParamStore params;
  InverseDynamics inv;
};

Net make(std::size_t h, std::size_t D, std::size_t hidden, std::uint64_t seed) {
  Net n;
  Rng rng(seed);
  n.inv = InverseDynamics::create(n.params, {h, hidden, D}, rng);
  return n;
}

// Rows of (window, next) with the action equal to the change of the first
// feature between s_t and s'_{t+1}.
struct Batch {
  Tensor inputs;
  Tensor actions;
};

Batch linear_rule_batch(std::size_t n, std::size_t h, std::size_t D, Rng& rng) {
  const std::size_t width = (h + 2) * D;
  Batch b{Tensor(n, width), Tensor(n, 1)};
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < width; ++c) b.inputs(r, c) = rng.uniform(-0.5, 0.5);
    b.actions(r, 0) = b.inputs(r, (h + 1) * D) - b.inputs(r, h * D);
  }
  return b;
}

double loss_of(Net& n, const Batch& b) {
  ad::Tape tape(false);
  Graph g(tape, n.params);
  return inv_loss(g, n.inv, b.inputs, b.actions).value()[0];
}

std::vector<double> fit(Net& n, const Batch& b, std::size_t steps, double lr) {
  Adam adam(AdamConfig{lr, 0.9, 0.999, 1e-8});
  std::vector<double> losses;
  for (std::size_t s = 0; s < steps; ++s) {
    ad::Tape tape;
    Graph g(tape, n.params);
    const ad::Var loss = inv_loss(g, n.inv, b.inputs, b.actions);
    losses.push_back(loss.value()[0]);
    tape.backward(loss);
    adam.step(n.params);
  }
  return losses;
}

}  // namespace

TEST(InverseDynamics, ZeroNetworkKeepsTheCoefficient) {
  Net n = make(4, 8, 16, 1);
  zero_params(n.params, "psi");
  Rng rng(2);
  const double a = n.inv.predict(n.params, random_tensor(5, 8, rng), random_tensor(1, 8, rng));
  EXPECT_EQ(a, 0.0);
  EXPECT_EQ(next_coefficient(0.7, a), 0.7);
}

TEST(InverseDynamics, ExecutedCoefficientIsFlooredAtZero) {
  EXPECT_EQ(next_coefficient(0.5, -0.8), 0.0);
  EXPECT_EQ(next_coefficient(0.5, -0.5), 0.0);
  EXPECT_DOUBLE_EQ(next_coefficient(0.5, 0.25), 0.75);
}

TEST(InverseDynamics, PredictionIsDeterministic) {
  Net n = make(3, 4, 16, 3);
  Rng rng(4);
  const Tensor w = random_tensor(4, 4, rng);
  const Tensor next = random_tensor(1, 4, rng);
  EXPECT_EQ(n.inv.predict(n.params, w, next), n.inv.predict(n.params, w, next));
}

TEST(InverseDynamics, ShapeErrors) {
  Net n = make(3, 4, 16, 5);
  EXPECT_THROW(n.inv.predict(n.params, Tensor(3, 4), Tensor(1, 4)), ShapeError);
  EXPECT_THROW(n.inv.predict(n.params, Tensor(4, 4), Tensor(1, 5)), ShapeError);
  ad::Tape tape(false);
  Graph g(tape, n.params);
  EXPECT_THROW(inv_loss(g, n.inv, Tensor(3, 24), Tensor(2, 1)), ShapeError);
  EXPECT_THROW(window(Tensor(3, 4), 3, 2), ShapeError);
  Rng rng(1);
  EXPECT_THROW(InverseDynamics::create(n.params, {0, 16, 4}, rng, "other"), ConfigError);
}

TEST(InverseDynamics, EarlyWindowsRepeatTheFirstState) {
  Tensor states(6, 2);
  for (std::size_t r = 0; r < 6; ++r) {
    states(r, 0) = static_cast<double>(r);
    states(r, 1) = -static_cast<double>(r);
  }
  const Tensor w0 = window(states, 0, 3);
  for (std::size_t r = 0; r < 4; ++r) EXPECT_EQ(w0(r, 0), 0.0);
  const Tensor w2 = window(states, 2, 3);
  const double expect2[] = {0, 0, 1, 2};
  for (std::size_t r = 0; r < 4; ++r) EXPECT_EQ(w2(r, 0), expect2[r]);
  const Tensor w5 = window(states, 5, 3);
  for (std::size_t r = 0; r < 4; ++r) {
    EXPECT_EQ(w5(r, 0), static_cast<double>(r + 2));
    EXPECT_EQ(w5(r, 1), -static_cast<double>(r + 2));
  }
  const auto flat = flatten_input(w5, Tensor::from_data({1, 2}, {9.0, 8.0}));
  ASSERT_EQ(flat.size(), 10u);
  EXPECT_EQ(flat[0], 2.0);
  EXPECT_EQ(flat[8], 9.0);
  EXPECT_EQ(flat[9], 8.0);
}

TEST(InverseDynamics, LossClosedForms) {
  Net n = make(1, 2, 8, 6);
  zero_params(n.params, "psi");
  Rng rng(7);
  const Tensor inputs = random_tensor(4, 6, rng);
  const Tensor actions = Tensor::from_data({4, 1}, {1.0, -2.0, 0.5, 0.0});
  ad::Tape tape(false);
  Graph g(tape, n.params);
  EXPECT_DOUBLE_EQ(inv_loss(g, n.inv, inputs, actions).value()[0], (1.0 + 4.0 + 0.25) / 4.0);
  EXPECT_EQ(inv_loss(g, n.inv, inputs, Tensor(4, 1, 0.0)).value()[0], 0.0);
}

TEST(InverseDynamics, LearnsTheCoefficientDifferenceRule) {
  const std::size_t h = 2, D = 3;
  Net n = make(h, D, 16, 8);
  Rng rng(9);
  const Batch train = linear_rule_batch(64, h, D, rng);
  const Batch held = linear_rule_batch(200, h, D, rng);
  const double initial = loss_of(n, train);
  const auto losses = fit(n, train, 500, 1e-2);
  EXPECT_LT(losses.back(), 1e-3);
  EXPECT_LT(losses.back(), 0.05 * initial);
  fit(n, train, 1000, 1e-3);
  fit(n, train, 1000, 1e-4);
  const auto worst_error = [&](const Batch& b) {
    double worst = 0.0;
    for (std::size_t r = 0; r < b.inputs.rows(); ++r) {
      Tensor win(h + 1, D), next(1, D);
      for (std::size_t c = 0; c < (h + 1) * D; ++c) win[c] = b.inputs(r, c);
      for (std::size_t c = 0; c < D; ++c) next[c] = b.inputs(r, (h + 1) * D + c);
      worst = std::max(worst, std::abs(n.inv.predict(n.params, win, next) - b.actions(r, 0)));
    }
    return worst;
  };
  EXPECT_LT(worst_error(train), 1e-3);
  // Unseen windows: 12 inputs and 64 samples, so only approximate.
  EXPECT_LT(worst_error(held), 5e-2);
}
