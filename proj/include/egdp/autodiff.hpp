#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "egdp/params.hpp"
#include "egdp/tensor.hpp"

namespace egdp::ad {

class Tape;

// Handle to a node on a Tape. Cheap to copy; valid while its tape lives.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

// Wengert list for reverse-mode differentiation. Nodes are appended in
// evaluation order; backward() walks them in reverse once.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  // With record_grad = false no backward closures are kept (inference mode).
  explicit Tape(bool record_grad = true) : record_grad_(record_grad) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  // Differentiable input; its gradient is readable through grad() after backward.
  Var leaf(Tensor value);
  // Binds a parameter; backward() accumulates into p.grad.
  Var param(Parameter& p);

  const Tensor& value(Var v) const;
  const Tensor& grad(Var v) const;
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  bool recording() const noexcept { return record_grad_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  // `out` must be a 1 x 1 scalar; it is seeded with gradient 1.
  void backward(Var out);
  void backward(Var out, const Tensor& seed);

  // Used by primitive implementations.
  Var push(Tensor value, bool requires_grad, BackwardFn fn, const char* op);
  const Tensor& value_of(std::size_t id) const;
  const Tensor& grad_of(std::size_t id) const { return nodes_[id].grad; }
  // Gradient buffer of a node, allocated on first use.
  Tensor& grad_buffer(std::size_t id);

 private:
  struct Node {
    Tensor value;
    const Tensor* external = nullptr;  // parameter storage, not copied
    Tensor grad;
    bool requires_grad = false;
    BackwardFn backward;
    Parameter* param = nullptr;
    const char* op = "";
  };

  void check_var(Var v, const char* what) const;

  std::vector<Node> nodes_;
  bool record_grad_ = true;
  bool backward_done_ = false;
};

// ---- primitives ----------------------------------------------------------

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
// Broadcasts a 1 x m row over every row of a.
Var add_row(Var a, Var row);
Var mul_row(Var a, Var row);
Var matmul(Var a, Var b);
// x W + b with W stored in x out layout.
Var dense(Var x, Var weight, Var bias);

Var gelu(Var a);
Var tanh(Var a);
Var exp(Var a);

inline constexpr double kLayerNormEps = 1e-10;
// Row-wise (x - mean) / sqrt(var + eps), population variance, no affine part.
Var layer_norm(Var a, double eps = kLayerNormEps);
Var softmax_rows(Var a);

// Multi-head scaled dot-product attention, batched by contiguous row blocks:
// q is (batch * tq) x d, k and v are (batch * tk) x d. Heads split the columns
// evenly. If weights_out is given it receives the (batch * heads * tq) x tk
// attention matrix.
Var attention(Var q, Var k, Var v, std::size_t batch, std::size_t heads, double scale,
              Tensor* weights_out = nullptr);

Var concat_cols(std::span<const Var> parts);
Var slice_cols(Var a, std::size_t begin, std::size_t count);
Var concat_rows(std::span<const Var> parts);
Var slice_rows(Var a, std::size_t begin, std::size_t count);
Var reshape(Var a, std::size_t rows, std::size_t cols);
// Each row repeated `times` times consecutively.
Var repeat_rows(Var a, std::size_t times);
// The whole matrix stacked `times` times.
Var tile_rows(Var a, std::size_t times);
// Row r comes from b where mask[r] != 0, else from a.
Var select_rows(Var a, Var b, const std::vector<std::uint8_t>& mask);
// Mean over consecutive blocks of `segment` rows.
Var segment_mean_rows(Var a, std::size_t segment);

Var sum(Var a);
Var mean(Var a);
// Mean of squared differences over all elements.
Var mse(Var a, Var b);
// KL(N(mu, exp(logvar)) || N(0, I)) summed over columns, averaged over rows.
Var kl_standard_normal(Var mu, Var logvar);

}  // namespace egdp::ad
