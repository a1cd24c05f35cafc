#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "egdp/autodiff.hpp"
#include "egdp/error.hpp"
#include "egdp/gradcheck.hpp"
#include "egdp/layers.hpp"
#include "egdp/params.hpp"
#include "egdp/rng.hpp"

using namespace egdp;

namespace {

Tensor randn(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
  Tensor t(r, c);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = scale * rng.normal();
  return t;
}

// Projects an op's output onto fixed random weights so every output entry
// contributes to the scalar loss.
ad::Var project(Graph& g, ad::Var out, std::uint64_t seed) {
  Rng rng(seed);
  return ad::sum(ad::mul(out, g.constant(randn(out.rows(), out.cols(), rng))));
}

struct OpCase {
  std::string name;
  std::vector<std::pair<std::size_t, std::size_t>> shapes;
  std::function<ad::Var(Graph&, std::vector<ad::Var>&)> op;
};

GradCheckReport check_op(const OpCase& c, std::uint64_t seed) {
  Rng rng(seed);
  ParamStore params;
  for (std::size_t i = 0; i < c.shapes.size(); ++i) {
    params.add("p" + std::to_string(i), randn(c.shapes[i].first, c.shapes[i].second, rng, 0.8));
  }
  return check_gradients(params, [&](ad::Tape& tape) {
    Graph g(tape, params);
    std::vector<ad::Var> in;
    for (std::size_t i = 0; i < c.shapes.size(); ++i) in.push_back(g.param(i));
    return project(g, c.op(g, in), seed + 100);
  });
}

}  // namespace

TEST(Autodiff, DenseIdentityMap) {
  ParamStore params;
  Rng rng(1);
  const Dense d = Dense::create(params, "d", 3, 3, rng);
  params.at(d.weight).value = Tensor::from_data({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  ad::Tape tape(false);
  Graph g(tape, params);
  const Tensor x = randn(4, 3, rng);
  EXPECT_EQ(d(g, g.constant(x)).value(), x);
}

TEST(Autodiff, SoftmaxRowsAreDistributions) {
  Rng rng(2);
  ad::Tape tape(false);
  const Tensor x = randn(6, 7, rng, 5.0);
  const Tensor y = ad::softmax_rows(tape.constant(x)).value();
  for (std::size_t r = 0; r < y.rows(); ++r) {
    double s = 0.0;
    for (double v : y.row(r)) {
      EXPECT_GT(v, 0.0);
      EXPECT_LT(v, 1.0);
      s += v;
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Autodiff, LayerNormRowsAreStandardized) {
  Rng rng(3);
  ad::Tape tape(false);
  const Tensor x = randn(5, 16, rng, 3.0);
  const Tensor y = ad::layer_norm(tape.constant(x)).value();
  Tensor shifted = x;
  for (std::size_t i = 0; i < shifted.size(); ++i) shifted[i] += 7.5;
  const Tensor ys = ad::layer_norm(tape.constant(shifted)).value();
  for (std::size_t r = 0; r < y.rows(); ++r) {
    double m = 0.0, v = 0.0;
    for (double e : y.row(r)) m += e;
    m /= 16.0;
    for (double e : y.row(r)) v += (e - m) * (e - m);
    v /= 16.0;
    EXPECT_NEAR(m, 0.0, 1e-10);
    EXPECT_NEAR(v, 1.0, 1e-8);
  }
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], ys[i], 1e-8);
}

TEST(Autodiff, LayerNormOfConstantRowIsZero) {
  ad::Tape tape(false);
  const Tensor y = ad::layer_norm(tape.constant(Tensor(2, 4, 0.0))).value();
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_EQ(y[i], 0.0);
}

TEST(Autodiff, HalfSquaredNormGradientIsInput) {
  Rng rng(4);
  ad::Tape tape;
  const Tensor x = randn(3, 5, rng);
  const ad::Var xv = tape.leaf(x);
  const ad::Var loss = ad::scale(ad::sum(ad::mul(xv, xv)), 0.5);
  tape.backward(loss);
  const Tensor& g = tape.grad(xv);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_DOUBLE_EQ(g[i], x[i]);
}

TEST(Autodiff, ConstantLossGivesZeroGradients) {
  ParamStore params;
  params.add("w", Tensor(2, 2, 1.5));
  ad::Tape tape;
  Graph g(tape, params);
  const ad::Var w = g.param("w");
  const ad::Var loss = ad::add(ad::scale(ad::sum(w), 0.0), g.constant(Tensor(1, 1, 3.0)));
  tape.backward(loss);
  for (double v : params.at("w").grad.data()) EXPECT_EQ(v, 0.0);
}

TEST(Autodiff, BackwardStateErrors) {
  ad::Tape empty;
  EXPECT_THROW(empty.backward(ad::Var{}), StateError);

  ad::Tape tape;
  const ad::Var x = tape.leaf(Tensor(1, 1, 2.0));
  const ad::Var y = ad::mul(x, x);
  tape.backward(y);
  EXPECT_THROW(tape.backward(y), StateError);

  ad::Tape inference(false);
  const ad::Var z = inference.constant(Tensor(1, 1, 1.0));
  EXPECT_THROW(inference.backward(z), StateError);
}

TEST(Autodiff, NonScalarBackwardIsShapeError) {
  ad::Tape tape;
  const ad::Var x = tape.leaf(Tensor(2, 2, 1.0));
  EXPECT_THROW(tape.backward(x), ShapeError);
}

TEST(Autodiff, ShapeMismatchNamesTheNode) {
  ad::Tape tape;
  const ad::Var a = tape.constant(Tensor(2, 3));
  const ad::Var b = tape.constant(Tensor(4, 2));
  try {
    ad::matmul(a, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("matmul"), std::string::npos) << e.what();
  }
  ParamStore params;
  Rng rng(1);
  const Dense d = Dense::create(params, "layer", 5, 2, rng);
  Graph g(tape, params);
  try {
    d(g, a);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("layer"), std::string::npos) << e.what();
  }
}

TEST(Autodiff, EveryPrimitivePassesFiniteDifferences) {
  const std::vector<OpCase> cases = {
      {"add", {{3, 4}, {3, 4}}, [](Graph&, auto& v) { return ad::add(v[0], v[1]); }},
      {"sub", {{3, 4}, {3, 4}}, [](Graph&, auto& v) { return ad::sub(v[0], v[1]); }},
      {"mul", {{3, 4}, {3, 4}}, [](Graph&, auto& v) { return ad::mul(v[0], v[1]); }},
      {"scale", {{3, 4}}, [](Graph&, auto& v) { return ad::scale(v[0], -1.7); }},
      {"add_row", {{3, 4}, {1, 4}}, [](Graph&, auto& v) { return ad::add_row(v[0], v[1]); }},
      {"mul_row", {{3, 4}, {1, 4}}, [](Graph&, auto& v) { return ad::mul_row(v[0], v[1]); }},
      {"matmul", {{3, 4}, {4, 2}}, [](Graph&, auto& v) { return ad::matmul(v[0], v[1]); }},
      {"dense", {{3, 4}, {4, 2}, {1, 2}}, [](Graph&, auto& v) { return ad::dense(v[0], v[1], v[2]); }},
      {"gelu", {{3, 4}}, [](Graph&, auto& v) { return ad::gelu(v[0]); }},
      {"tanh", {{3, 4}}, [](Graph&, auto& v) { return ad::tanh(v[0]); }},
      {"exp", {{3, 4}}, [](Graph&, auto& v) { return ad::exp(v[0]); }},
      {"layer_norm", {{3, 6}}, [](Graph&, auto& v) { return ad::layer_norm(v[0]); }},
      {"softmax_rows", {{3, 5}}, [](Graph&, auto& v) { return ad::softmax_rows(v[0]); }},
      {"attention", {{6, 4}, {8, 4}, {8, 4}},
       [](Graph&, auto& v) { return ad::attention(v[0], v[1], v[2], 2, 2, 0.5); }},
      {"concat_cols", {{3, 2}, {3, 3}},
       [](Graph&, auto& v) { return ad::concat_cols(std::vector<ad::Var>{v[0], v[1]}); }},
      {"concat_rows", {{2, 3}, {4, 3}},
       [](Graph&, auto& v) { return ad::concat_rows(std::vector<ad::Var>{v[0], v[1]}); }},
      {"slice_cols", {{3, 5}}, [](Graph&, auto& v) { return ad::slice_cols(v[0], 1, 3); }},
      {"slice_rows", {{5, 3}}, [](Graph&, auto& v) { return ad::slice_rows(v[0], 2, 2); }},
      {"reshape", {{2, 6}}, [](Graph&, auto& v) { return ad::reshape(v[0], 4, 3); }},
      {"repeat_rows", {{2, 3}}, [](Graph&, auto& v) { return ad::repeat_rows(v[0], 3); }},
      {"tile_rows", {{2, 3}}, [](Graph&, auto& v) { return ad::tile_rows(v[0], 3); }},
      {"select_rows", {{4, 3}, {4, 3}},
       [](Graph&, auto& v) { return ad::select_rows(v[0], v[1], std::vector<std::uint8_t>{1, 0, 0, 1}); }},
      {"segment_mean_rows", {{6, 2}}, [](Graph&, auto& v) { return ad::segment_mean_rows(v[0], 3); }},
      {"mean", {{3, 4}}, [](Graph&, auto& v) { return ad::mean(v[0]); }},
      {"mse", {{3, 4}, {3, 4}}, [](Graph&, auto& v) { return ad::mse(v[0], v[1]); }},
      {"kl_standard_normal", {{3, 4}, {3, 4}}, [](Graph&, auto& v) { return ad::kl_standard_normal(v[0], v[1]); }},
  };
  std::uint64_t seed = 10;
  for (const auto& c : cases) {
    const GradCheckReport r = check_op(c, seed++);
    EXPECT_TRUE(r.passed) << c.name << ": max rel error " << r.max_rel_error << " at " << r.worst_param << "["
                          << r.worst_index << "]";
    EXPECT_GT(r.coordinates, 0u) << c.name;
  }
}

TEST(Autodiff, ComposedNetworkPassesFiniteDifferences) {
  Rng rng(20);
  ParamStore params;
  const Mlp2 mlp = Mlp2::create(params, "mlp", 5, 8, 3, rng);
  const Dense q = Dense::create(params, "q", 3, 4, rng);
  for (auto& p : params) {
    for (std::size_t i = 0; i < p.value.size(); ++i) p.value[i] += 0.1 * rng.normal();
  }
  const Tensor x = randn(4, 5, rng);
  const Tensor y = randn(4, 4, rng);
  const auto r = check_gradients(params, [&](ad::Tape& tape) {
    Graph g(tape, params);
    const ad::Var h = ad::layer_norm(mlp(g, g.constant(x)));
    const ad::Var a = q(g, h);
    const ad::Var att = ad::attention(a, a, a, 1, 2, 0.5);
    return ad::mse(ad::tanh(att), g.constant(y));
  });
  EXPECT_TRUE(r.passed) << r.max_rel_error;
}

TEST(Autodiff, AttentionWithZeroQueryIsUniform) {
  Rng rng(5);
  ad::Tape tape(false);
  const Tensor k = randn(5, 4, rng), v = randn(5, 4, rng);
  Tensor weights;
  ad::attention(tape.constant(Tensor(3, 4, 0.0)), tape.constant(k), tape.constant(v), 1, 2, 0.5, &weights);
  for (std::size_t i = 0; i < weights.size(); ++i) EXPECT_NEAR(weights[i], 0.2, 1e-15);
}

TEST(Autodiff, AttentionOverOneTokenReturnsItsValue) {
  Rng rng(6);
  ad::Tape tape(false);
  const Tensor q = randn(3, 4, rng), k = randn(1, 4, rng), v = randn(1, 4, rng);
  const Tensor out = ad::attention(tape.constant(q), tape.constant(k), tape.constant(v), 1, 2, 0.5).value();
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t c = 0; c < 4; ++c) EXPECT_DOUBLE_EQ(out(r, c), v[c]);
  }
}

TEST(Autodiff, ForwardAndBackwardAreDeterministic) {
  const auto run = [] {
    Rng rng(7);
    ParamStore params;
    const Mlp2 mlp = Mlp2::create(params, "m", 4, 6, 2, rng);
    const Tensor x = randn(3, 4, rng);
    ad::Tape tape;
    Graph g(tape, params);
    const ad::Var loss = ad::mean(ad::mul(mlp(g, g.constant(x)), mlp(g, g.constant(x))));
    tape.backward(loss);
    std::vector<Tensor> out{loss.value()};
    for (const auto& p : params) out.push_back(p.grad);
    return out;
  };
  EXPECT_EQ(run(), run());
}

TEST(Autodiff, AdamZeroGradientLeavesParametersUnchanged) {
  ParamStore params;
  params.add("w", Tensor::from_data({1, 3}, {1.0, -2.0, 0.5}));
  const Tensor before = params.at("w").value;
  Adam adam;
  adam.step(params);
  EXPECT_EQ(params.at("w").value, before);
}

TEST(Autodiff, AdamDescendsOnSquare) {
  ParamStore params;
  params.add("w", Tensor(1, 1, 1.0));
  Adam adam({0.1, 0.9, 0.999, 1e-8});
  ad::Tape tape;
  Graph g(tape, params);
  const ad::Var w = g.param("w");
  tape.backward(ad::sum(ad::mul(w, w)));
  adam.step(params);
  EXPECT_LT(std::abs(params.at("w").value[0]), 1.0);
  for (double v : params.at("w").grad.data()) EXPECT_EQ(v, 0.0);
}

TEST(Autodiff, AdamSolvesTwoDimensionalQuadratic) {
  ParamStore params;
  params.add("w", Tensor::from_data({1, 2}, {1.0, -1.5}));
  const Tensor scale = Tensor::from_data({1, 2}, {1.0, 3.0});
  Adam adam({0.05, 0.9, 0.999, 1e-8});
  double loss = 0.0;
  for (int step = 0; step < 200; ++step) {
    ad::Tape tape;
    Graph g(tape, params);
    const ad::Var w = g.param("w");
    const ad::Var l = ad::sum(ad::mul_row(ad::mul(w, w), g.constant(scale)));
    loss = l.value()[0];
    tape.backward(l);
    adam.step(params);
  }
  EXPECT_LT(loss, 1e-3);
}

TEST(Autodiff, AdamRejectsNonFiniteGradient) {
  ParamStore params;
  params.add("w", Tensor(1, 2, 1.0));
  params.at("w").grad[1] = std::nan("");
  const Tensor before = params.at("w").value;
  Adam adam;
  try {
    adam.step(params);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("'w'"), std::string::npos);
  }
  EXPECT_EQ(params.at("w").value, before);
}
