#include "egdp/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>

#include "egdp/error.hpp"

namespace egdp::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;
using StridedMap = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;
using CStridedMap = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;

CMapMat cmap(const Tensor& t) { return CMapMat(t.ptr(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())); }
MapMat map(Tensor& t) { return MapMat(t.ptr(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())); }

std::string dims(const Tensor& t) { return std::to_string(t.rows()) + "x" + std::to_string(t.cols()); }

Tape* same_tape(Var a, Var b, const char* op) {
  if (!a.tape || a.tape != b.tape) throw StateError(std::string(op) + ": operands live on different tapes");
  return a.tape;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + dims(a) + " vs " + dims(b));
  }
}

bool any_grad(Tape& t, std::initializer_list<Var> vs) {
  if (!t.recording()) return false;
  for (Var v : vs) {
    if (t.requires_grad(v.id)) return true;
  }
  return false;
}

// Elementwise unary op with derivative computed from (x, y).
template <typename F, typename D>
Var unary(Var a, const char* op, F f, D df) {
  Tape& t = *a.tape;
  const Tensor& x = a.value();
  Tensor y(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  const bool rg = any_grad(t, {a});
  const std::size_t ai = a.id;
  return t.push(std::move(y), rg, rg ? Tape::BackwardFn([ai, df](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_of(self);
    const Tensor& xv = tp.value_of(ai);
    const Tensor& yv = tp.value_of(self);
    Tensor& ga = tp.grad_buffer(ai);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * df(xv[i], yv[i]);
  }) : Tape::BackwardFn{}, op);
}

}  // namespace

const Tensor& Var::value() const {
  if (!tape) throw StateError("Var: not bound to a tape");
  return tape->value(*this);
}

Var Tape::constant(Tensor value) { return push(std::move(value), false, {}, "constant"); }

Var Tape::leaf(Tensor value) { return push(std::move(value), record_grad_, {}, "leaf"); }

Var Tape::param(Parameter& p) {
  Node n;
  n.external = &p.value;
  n.requires_grad = record_grad_;
  n.param = &p;
  n.op = "param";
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

Var Tape::push(Tensor value, bool requires_grad, BackwardFn fn, const char* op) {
  if (backward_done_) throw StateError(std::string(op) + ": tape already consumed by backward()");
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad && record_grad_;
  if (n.requires_grad) n.backward = std::move(fn);
  n.op = op;
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

void Tape::check_var(Var v, const char* what) const {
  if (v.tape != this || v.id >= nodes_.size()) throw StateError(std::string(what) + ": variable not on this tape");
}

const Tensor& Tape::value_of(std::size_t id) const {
  const Node& n = nodes_[id];
  return n.external ? *n.external : n.value;
}

const Tensor& Tape::value(Var v) const {
  check_var(v, "value");
  return value_of(v.id);
}

const Tensor& Tape::grad(Var v) const {
  check_var(v, "grad");
  if (!backward_done_) throw StateError("grad: backward() has not run");
  return nodes_[v.id].grad;
}

Tensor& Tape::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) {
    const Tensor& v = n.external ? *n.external : n.value;
    n.grad = Tensor(v.rows(), v.cols(), 0.0);
  }
  return n.grad;
}

void Tape::backward(Var out) {
  check_var(out, "backward");
  const Tensor& v = value(out);
  if (v.size() != 1) throw ShapeError("backward: output must be a scalar, got " + dims(v));
  backward(out, Tensor(1, 1, 1.0));
}

void Tape::backward(Var out, const Tensor& seed) {
  if (nodes_.empty()) throw StateError("backward: no forward pass recorded");
  check_var(out, "backward");
  if (!record_grad_) throw StateError("backward: tape was created without gradient recording");
  if (backward_done_) throw StateError("backward: already called on this tape");
  const Tensor& ov = value(out);
  if (seed.size() != ov.size()) throw ShapeError("backward: seed shape " + dims(seed) + " vs output " + dims(ov));
  backward_done_ = true;
  if (!nodes_[out.id].requires_grad) return;
  Tensor& g = grad_buffer(out.id);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += seed[i];

  for (std::size_t i = out.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.grad.empty() || !n.requires_grad) continue;
    if (n.backward) n.backward(*this, i);
    if (n.param) {
      Tensor& pg = n.param->grad;
      for (std::size_t j = 0; j < pg.size(); ++j) pg[j] += n.grad[j];
    }
  }
}

// ---- arithmetic ------------------------------------------------------------

Var add(Var a, Var b) {
  Tape& t = *same_tape(a, b, "add");
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  require_same_shape(x, y, "add");
  Tensor out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i];
  const bool rg = any_grad(t, {a, b});
  const std::size_t ai = a.id, bi = b.id;
  return t.push(std::move(out), rg, [ai, bi](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_of(self);
    for (std::size_t id : {ai, bi}) {
      if (!tp.requires_grad(id)) continue;
      Tensor& ga = tp.grad_buffer(id);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
  }, "add");
}

Var sub(Var a, Var b) {
  Tape& t = *same_tape(a, b, "sub");
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  require_same_shape(x, y, "sub");
  Tensor out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - y[i];
  const bool rg = any_grad(t, {a, b});
  const std::size_t ai = a.id, bi = b.id;
  return t.push(std::move(out), rg, [ai, bi](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_of(self);
    if (tp.requires_grad(ai)) {
      Tensor& ga = tp.grad_buffer(ai);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (tp.requires_grad(bi)) {
      Tensor& gb = tp.grad_buffer(bi);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  }, "sub");
}

Var mul(Var a, Var b) {
  Tape& t = *same_tape(a, b, "mul");
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  require_same_shape(x, y, "mul");
  Tensor out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[i];
  const bool rg = any_grad(t, {a, b});
  const std::size_t ai = a.id, bi = b.id;
  return t.push(std::move(out), rg, [ai, bi](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_of(self);
    const Tensor& xv = tp.value_of(ai);
    const Tensor& yv = tp.value_of(bi);
    if (tp.requires_grad(ai)) {
      Tensor& ga = tp.grad_buffer(ai);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * yv[i];
    }
    if (tp.requires_grad(bi)) {
      Tensor& gb = tp.grad_buffer(bi);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * xv[i];
    }
  }, "mul");
}

Var scale(Var a, double s) {
  return unary(a, "scale", [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Var add_row(Var a, Var row) {
  Tape& t = *same_tape(a, row, "add_row");
  const Tensor& x = a.value();
  const Tensor& r = row.value();
  if (r.rows() != 1 || r.cols() != x.cols()) {
    throw ShapeError("add_row: row " + dims(r) + " does not broadcast over " + dims(x));
  }
  Tensor out(x.rows(), x.cols());
  const std::size_t m = x.cols();
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] = x[i * m + j] + r[j];
  const bool rg = any_grad(t, {a, row});
  const std::size_t ai = a.id, ri = row.id;
  return t.push(std::move(out), rg, [ai, ri, m](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_of(self);
    if (tp.requires_grad(ai)) {
      Tensor& ga = tp.grad_buffer(ai);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (tp.requires_grad(ri)) {
      Tensor& gr = tp.grad_buffer(ri);
      for (std::size_t i = 0; i < g.size(); ++i) gr[i % m] += g[i];
    }
  }, "add_row");
}

Var mul_row(Var a, Var row) {
  Tape& t = *same_tape(a, row, "mul_row");
  const Tensor& x = a.value();
  const Tensor& r = row.value();
  if (r.rows() != 1 || r.cols() != x.cols()) {
    throw ShapeError("mul_row: row " + dims(r) + " does not broadcast over " + dims(x));
  }
  Tensor out(x.rows(), x.cols());
  const std::size_t m = x.cols();
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * r[i % m];
  const bool rg = any_grad(t, {a, row});
  const std::size_t ai = a.id, ri = row.id;
  return t.push(std::move(out), rg, [ai, ri, m](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_of(self);
    const Tensor& xv = tp.value_of(ai);
    const Tensor& rv = tp.value_of(ri);
    if (tp.requires_grad(ai)) {
      Tensor& ga = tp.grad_buffer(ai);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * rv[i % m];
    }
    if (tp.requires_grad(ri)) {
      Tensor& gr = tp.grad_buffer(ri);
      for (std::size_t i = 0; i < g.size(); ++i) gr[i % m] += g[i] * xv[i];
    }
  }, "mul_row");
}

Var matmul(Var a, Var b) {
  Tape& t = *same_tape(a, b, "matmul");
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (x.cols() != y.rows()) throw ShapeError("matmul: lhs " + dims(x) + " vs rhs " + dims(y));
  Tensor out(x.rows(), y.cols());
  map(out).noalias() = cmap(x) * cmap(y);
  const bool rg = any_grad(t, {a, b});
  const std::size_t ai = a.id, bi = b.id;
  return t.push(std::move(out), rg, [ai, bi](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_of(self);
    if (tp.requires_grad(ai)) map(tp.grad_buffer(ai)).noalias() += cmap(g) * cmap(tp.value_of(bi)).transpose();
    if (tp.requires_grad(bi)) map(tp.grad_buffer(bi)).noalias() += cmap(tp.value_of(ai)).transpose() * cmap(g);
  }, "matmul");
}

Var dense(Var x, Var weight, Var bias) { return add_row(matmul(x, weight), bias); }

// ---- nonlinearities --------------------------------------------------------

Var gelu(Var a) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  return unary(
      a, "gelu", [=](double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); },
      [=](double x, double) {
        return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) + x * inv_sqrt_2pi * std::exp(-0.5 * x * x);
      });
}

Var tanh(Var a) {
  return unary(a, "tanh", [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var exp(Var a) {
  return unary(a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var layer_norm(Var a, double eps) {
  Tape& t = *a.tape;
  const Tensor& x = a.value();
  const std::size_t n = x.rows(), m = x.cols();
  Tensor out(n, m);
  std::vector<double> inv_std(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* xr = x.ptr() + i * m;
    double mu = 0.0;
    for (std::size_t j = 0; j < m; ++j) mu += xr[j];
    mu /= static_cast<double>(m);
    double var = 0.0;
    for (std::size_t j = 0; j < m; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(m);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] = (xr[j] - mu) * inv_std[i];
  }
  const bool rg = any_grad(t, {a});
  const std::size_t ai = a.id;
  return t.push(std::move(out), rg, [ai, n, m, inv_std = std::move(inv_std)](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_of(self);
    const Tensor& y = tp.value_of(self);
    Tensor& ga = tp.grad_buffer(ai);
    for (std::size_t i = 0; i < n; ++i) {
      double mean_g = 0.0, mean_gy = 0.0;
      for (std::size_t j = 0; j < m; ++j) {
        mean_g += g[i * m + j];
        mean_gy += g[i * m + j] * y[i * m + j];
      }
      mean_g /= static_cast<double>(m);
      mean_gy /= static_cast<double>(m);
      for (std::size_t j = 0; j < m; ++j) {
        ga[i * m + j] += inv_std[i] * (g[i * m + j] - mean_g - y[i * m + j] * mean_gy);
      }
    }
  }, "layer_norm");
}

namespace {

void softmax_row(const double* x, double* y, std::size_t m) {
  double mx = x[0];
  for (std::size_t j = 1; j < m; ++j) mx = std::max(mx, x[j]);
  double s = 0.0;
  for (std::size_t j = 0; j < m; ++j) {
    y[j] = std::exp(x[j] - mx);
    s += y[j];
  }
  for (std::size_t j = 0; j < m; ++j) y[j] /= s;
}

}  // namespace

Var softmax_rows(Var a) {
  Tape& t = *a.tape;
  const Tensor& x = a.value();
  const std::size_t n = x.rows(), m = x.cols();
  Tensor out(n, m);
  for (std::size_t i = 0; i < n; ++i) softmax_row(x.ptr() + i * m, out.ptr() + i * m, m);
  const bool rg = any_grad(t, {a});
  const std::size_t ai = a.id;
  return t.push(std::move(out), rg, [ai, n, m](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_of(self);
    const Tensor& y = tp.value_of(self);
    Tensor& ga = tp.grad_buffer(ai);
    for (std::size_t i = 0; i < n; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < m; ++j) dot += g[i * m + j] * y[i * m + j];
      for (std::size_t j = 0; j < m; ++j) ga[i * m + j] += y[i * m + j] * (g[i * m + j] - dot);
    }
  }, "softmax_rows");
}

Var attention(Var q, Var k, Var v, std::size_t batch, std::size_t heads, double scale_factor, Tensor* weights_out) {
  Tape& t = *same_tape(q, k, "attention");
  same_tape(q, v, "attention");
  const Tensor& Q = q.value();
  const Tensor& K = k.value();
  const Tensor& V = v.value();
  const std::size_t d = Q.cols();
  if (batch == 0 || heads == 0) throw ShapeError("attention: batch and heads must be >= 1");
  if (K.cols() != d || V.cols() != d || K.rows() != V.rows()) {
    throw ShapeError("attention: q " + dims(Q) + ", k " + dims(K) + ", v " + dims(V) + " are incompatible");
  }
  if (d % heads != 0) throw ShapeError("attention: model dim " + std::to_string(d) + " not divisible by heads");
  if (Q.rows() % batch != 0 || K.rows() % batch != 0) throw ShapeError("attention: rows not divisible by batch");
  const std::size_t tq = Q.rows() / batch, tk = K.rows() / batch, dh = d / heads;
  const auto Ei = [](std::size_t x) { return static_cast<Eigen::Index>(x); };

  Tensor out(Q.rows(), d);
  Tensor weights(batch * heads * tq, tk);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      CStridedMap qh(Q.ptr() + b * tq * d + h * dh, Ei(tq), Ei(dh), Eigen::OuterStride<>(Ei(d)));
      CStridedMap kh(K.ptr() + b * tk * d + h * dh, Ei(tk), Ei(dh), Eigen::OuterStride<>(Ei(d)));
      CStridedMap vh(V.ptr() + b * tk * d + h * dh, Ei(tk), Ei(dh), Eigen::OuterStride<>(Ei(d)));
      double* w = weights.ptr() + (b * heads + h) * tq * tk;
      MapMat wm(w, Ei(tq), Ei(tk));
      wm.noalias() = (qh * kh.transpose()) * scale_factor;
      for (std::size_t i = 0; i < tq; ++i) softmax_row(w + i * tk, w + i * tk, tk);
      StridedMap oh(out.ptr() + b * tq * d + h * dh, Ei(tq), Ei(dh), Eigen::OuterStride<>(Ei(d)));
      oh.noalias() = wm * vh;
    }
  }
  if (weights_out) *weights_out = weights;

  const bool rg = any_grad(t, {q, k, v});
  const std::size_t qi = q.id, ki = k.id, vi = v.id;
  return t.push(std::move(out), rg, [=, weights = std::move(weights)](Tape& tp, std::size_t self) {
    const Tensor& G = tp.grad_of(self);
    const Tensor& Qv = tp.value_of(qi);
    const Tensor& Kv = tp.value_of(ki);
    const Tensor& Vv = tp.value_of(vi);
    Tensor* gq = tp.requires_grad(qi) ? &tp.grad_buffer(qi) : nullptr;
    Tensor* gk = tp.requires_grad(ki) ? &tp.grad_buffer(ki) : nullptr;
    Tensor* gv = tp.requires_grad(vi) ? &tp.grad_buffer(vi) : nullptr;
    RowMat dp(Ei(tq), Ei(tk));
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t h = 0; h < heads; ++h) {
        const auto off_q = b * tq * d + h * dh;
        const auto off_k = b * tk * d + h * dh;
        CStridedMap gh(G.ptr() + off_q, Ei(tq), Ei(dh), Eigen::OuterStride<>(Ei(d)));
        CStridedMap qh(Qv.ptr() + off_q, Ei(tq), Ei(dh), Eigen::OuterStride<>(Ei(d)));
        CStridedMap kh(Kv.ptr() + off_k, Ei(tk), Ei(dh), Eigen::OuterStride<>(Ei(d)));
        CStridedMap vh(Vv.ptr() + off_k, Ei(tk), Ei(dh), Eigen::OuterStride<>(Ei(d)));
        CMapMat wm(weights.ptr() + (b * heads + h) * tq * tk, Ei(tq), Ei(tk));
        if (gv) {
          StridedMap gvh(gv->ptr() + off_k, Ei(tk), Ei(dh), Eigen::OuterStride<>(Ei(d)));
          gvh.noalias() += wm.transpose() * gh;
        }
        if (!gq && !gk) continue;
        dp.noalias() = gh * vh.transpose();
        for (Eigen::Index i = 0; i < dp.rows(); ++i) {
          const double dot = dp.row(i).dot(wm.row(i));
          dp.row(i) = (wm.row(i).array() * (dp.row(i).array() - dot)).matrix();
        }
        dp *= scale_factor;
        if (gq) {
          StridedMap gqh(gq->ptr() + off_q, Ei(tq), Ei(dh), Eigen::OuterStride<>(Ei(d)));
          gqh.noalias() += dp * kh;
        }
        if (gk) {
          StridedMap gkh(gk->ptr() + off_k, Ei(tk), Ei(dh), Eigen::OuterStride<>(Ei(d)));
          gkh.noalias() += dp.transpose() * qh;
        }
      }
    }
  }, "attention");
}

// ---- structural ------------------------------------------------------------

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  Tape& t = *parts[0].tape;
  const std::size_t n = parts[0].rows();
  std::size_t total = 0;
  std::vector<std::size_t> widths, ids;
  bool rg = false;
  for (Var p : parts) {
    same_tape(parts[0], p, "concat_cols");
    if (p.rows() != n) throw ShapeError("concat_cols: row count mismatch " + dims(p.value()) + " vs " + std::to_string(n));
    widths.push_back(p.cols());
    ids.push_back(p.id);
    total += p.cols();
    rg = rg || (t.recording() && t.requires_grad(p.id));
  }
  Tensor out(n, total);
  std::size_t off = 0;
  for (Var p : parts) {
    const Tensor& v = p.value();
    const std::size_t w = v.cols();
    for (std::size_t i = 0; i < n; ++i) std::copy_n(v.ptr() + i * w, w, out.ptr() + i * total + off);
    off += w;
  }
  return t.push(std::move(out), rg, [ids, widths, n, total](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_of(self);
    std::size_t off2 = 0;
    for (std::size_t p = 0; p < ids.size(); ++p) {
      const std::size_t w = widths[p];
      if (tp.requires_grad(ids[p])) {
        Tensor& gp = tp.grad_buffer(ids[p]);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < w; ++j) gp[i * w + j] += g[i * total + off2 + j];
      }
      off2 += w;
    }
  }, "concat_cols");
}

Var slice_cols(Var a, std::size_t begin, std::size_t count) {
  Tape& t = *a.tape;
  const Tensor& x = a.value();
  const std::size_t n = x.rows(), m = x.cols();
  if (begin + count > m) throw ShapeError("slice_cols: range exceeds " + dims(x));
  Tensor out(n, count);
  for (std::size_t i = 0; i < n; ++i) std::copy_n(x.ptr() + i * m + begin, count, out.ptr() + i * count);
  const bool rg = any_grad(t, {a});
  const std::size_t ai = a.id;
  return t.push(std::move(out), rg, [ai, n, m, begin, count](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_of(self);
    Tensor& ga = tp.grad_buffer(ai);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < count; ++j) ga[i * m + begin + j] += g[i * count + j];
  }, "slice_cols");
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  Tape& t = *parts[0].tape;
  const std::size_t m = parts[0].cols();
  std::size_t total = 0;
  std::vector<std::size_t> sizes, ids;
  bool rg = false;
  for (Var p : parts) {
    same_tape(parts[0], p, "concat_rows");
    if (p.cols() != m) throw ShapeError("concat_rows: column count mismatch " + dims(p.value()));
    sizes.push_back(p.value().size());
    ids.push_back(p.id);
    total += p.rows();
    rg = rg || (t.recording() && t.requires_grad(p.id));
  }
  Tensor out(total, m);
  std::size_t off = 0;
  for (Var p : parts) {
    const Tensor& v = p.value();
    std::copy_n(v.ptr(), v.size(), out.ptr() + off);
    off += v.size();
  }
  return t.push(std::move(out), rg, [ids, sizes](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_of(self);
    std::size_t off2 = 0;
    for (std::size_t p = 0; p < ids.size(); ++p) {
      if (tp.requires_grad(ids[p])) {
        Tensor& gp = tp.grad_buffer(ids[p]);
        for (std::size_t i = 0; i < sizes[p]; ++i) gp[i] += g[off2 + i];
      }
      off2 += sizes[p];
    }
  }, "concat_rows");
}

Var slice_rows(Var a, std::size_t begin, std::size_t count) {
  Tape& t = *a.tape;
  const Tensor& x = a.value();
  const std::size_t m = x.cols();
  if (begin + count > x.rows()) throw ShapeError("slice_rows: range exceeds " + dims(x));
  Tensor out(count, m);
  std::copy_n(x.ptr() + begin * m, count * m, out.ptr());
  const bool rg = any_grad(t, {a});
  const std::size_t ai = a.id;
  return t.push(std::move(out), rg, [ai, begin, m](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_of(self);
    Tensor& ga = tp.grad_buffer(ai);
    for (std::size_t i = 0; i < g.size(); ++i) ga[begin * m + i] += g[i];
  }, "slice_rows");
}

Var reshape(Var a, std::size_t rows, std::size_t cols) {
  Tape& t = *a.tape;
  const Tensor& x = a.value();
  if (rows * cols != x.size()) throw ShapeError("reshape: cannot view " + dims(x) + " as " + std::to_string(rows) + "x" + std::to_string(cols));
  Tensor out = x;
  out.reshape({rows, cols});
  const bool rg = any_grad(t, {a});
  const std::size_t ai = a.id;
  return t.push(std::move(out), rg, [ai](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_of(self);
    Tensor& ga = tp.grad_buffer(ai);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  }, "reshape");
}

Var repeat_rows(Var a, std::size_t times) {
  Tape& t = *a.tape;
  const Tensor& x = a.value();
  const std::size_t n = x.rows(), m = x.cols();
  Tensor out(n * times, m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t r = 0; r < times; ++r) std::copy_n(x.ptr() + i * m, m, out.ptr() + (i * times + r) * m);
  const bool rg = any_grad(t, {a});
  const std::size_t ai = a.id;
  return t.push(std::move(out), rg, [ai, n, m, times](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_of(self);
    Tensor& ga = tp.grad_buffer(ai);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t r = 0; r < times; ++r)
        for (std::size_t j = 0; j < m; ++j) ga[i * m + j] += g[(i * times + r) * m + j];
  }, "repeat_rows");
}

Var tile_rows(Var a, std::size_t times) {
  Tape& t = *a.tape;
  const Tensor& x = a.value();
  const std::size_t sz = x.size();
  Tensor out(x.rows() * times, x.cols());
  for (std::size_t r = 0; r < times; ++r) std::copy_n(x.ptr(), sz, out.ptr() + r * sz);
  const bool rg = any_grad(t, {a});
  const std::size_t ai = a.id;
  return t.push(std::move(out), rg, [ai, sz, times](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_of(self);
    Tensor& ga = tp.grad_buffer(ai);
    for (std::size_t r = 0; r < times; ++r)
      for (std::size_t i = 0; i < sz; ++i) ga[i] += g[r * sz + i];
  }, "tile_rows");
}

Var select_rows(Var a, Var b, const std::vector<std::uint8_t>& mask) {
  Tape& t = *same_tape(a, b, "select_rows");
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  require_same_shape(x, y, "select_rows");
  if (mask.size() != x.rows()) throw ShapeError("select_rows: mask length does not match rows of " + dims(x));
  const std::size_t m = x.cols();
  Tensor out(x.rows(), m);
  for (std::size_t i = 0; i < x.rows(); ++i) std::copy_n((mask[i] ? y : x).ptr() + i * m, m, out.ptr() + i * m);
  const bool rg = any_grad(t, {a, b});
  const std::size_t ai = a.id, bi = b.id;
  return t.push(std::move(out), rg, [ai, bi, m, mask](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_of(self);
    const bool ga_on = tp.requires_grad(ai), gb_on = tp.requires_grad(bi);
    for (std::size_t i = 0; i < mask.size(); ++i) {
      const bool from_b = mask[i] != 0;
      if (from_b ? !gb_on : !ga_on) continue;
      Tensor& dst = tp.grad_buffer(from_b ? bi : ai);
      for (std::size_t j = 0; j < m; ++j) dst[i * m + j] += g[i * m + j];
    }
  }, "select_rows");
}

Var segment_mean_rows(Var a, std::size_t segment) {
  Tape& t = *a.tape;
  const Tensor& x = a.value();
  if (segment == 0 || x.rows() % segment != 0) throw ShapeError("segment_mean_rows: rows not divisible by segment");
  const std::size_t n = x.rows() / segment, m = x.cols();
  Tensor out(n, m);
  const double inv = 1.0 / static_cast<double>(segment);
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t r = 0; r < segment; ++r)
      for (std::size_t j = 0; j < m; ++j) out[s * m + j] += x[(s * segment + r) * m + j] * inv;
  const bool rg = any_grad(t, {a});
  const std::size_t ai = a.id;
  return t.push(std::move(out), rg, [ai, n, m, segment, inv](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_of(self);
    Tensor& ga = tp.grad_buffer(ai);
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t r = 0; r < segment; ++r)
        for (std::size_t j = 0; j < m; ++j) ga[(s * segment + r) * m + j] += g[s * m + j] * inv;
  }, "segment_mean_rows");
}

// ---- reductions ------------------------------------------------------------

Var sum(Var a) {
  Tape& t = *a.tape;
  const Tensor& x = a.value();
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += x[i];
  const bool rg = any_grad(t, {a});
  const std::size_t ai = a.id;
  return t.push(Tensor(1, 1, s), rg, [ai](Tape& tp, std::size_t self) {
    const double g = tp.grad_of(self)[0];
    Tensor& ga = tp.grad_buffer(ai);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
  }, "sum");
}

Var mean(Var a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw ShapeError("mean: empty input");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var mse(Var a, Var b) {
  Tape& t = *same_tape(a, b, "mse");
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  require_same_shape(x, y, "mse");
  if (x.size() == 0) throw ShapeError("mse: empty input");
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += (x[i] - y[i]) * (x[i] - y[i]);
  const double inv = 1.0 / static_cast<double>(x.size());
  const bool rg = any_grad(t, {a, b});
  const std::size_t ai = a.id, bi = b.id;
  return t.push(Tensor(1, 1, s * inv), rg, [ai, bi, inv](Tape& tp, std::size_t self) {
    const double g = tp.grad_of(self)[0];
    const Tensor& xv = tp.value_of(ai);
    const Tensor& yv = tp.value_of(bi);
    if (tp.requires_grad(ai)) {
      Tensor& ga = tp.grad_buffer(ai);
      for (std::size_t i = 0; i < xv.size(); ++i) ga[i] += 2.0 * inv * g * (xv[i] - yv[i]);
    }
    if (tp.requires_grad(bi)) {
      Tensor& gb = tp.grad_buffer(bi);
      for (std::size_t i = 0; i < xv.size(); ++i) gb[i] -= 2.0 * inv * g * (xv[i] - yv[i]);
    }
  }, "mse");
}

Var kl_standard_normal(Var mu, Var logvar) {
  Tape& t = *same_tape(mu, logvar, "kl_standard_normal");
  const Tensor& m = mu.value();
  const Tensor& lv = logvar.value();
  require_same_shape(m, lv, "kl_standard_normal");
  double s = 0.0;
  for (std::size_t i = 0; i < m.size(); ++i) s += -0.5 * (1.0 + lv[i] - m[i] * m[i] - std::exp(lv[i]));
  const double inv_rows = 1.0 / static_cast<double>(m.rows());
  const bool rg = any_grad(t, {mu, logvar});
  const std::size_t mi = mu.id, li = logvar.id;
  return t.push(Tensor(1, 1, s * inv_rows), rg, [mi, li, inv_rows](Tape& tp, std::size_t self) {
    const double g = tp.grad_of(self)[0] * inv_rows;
    const Tensor& mv = tp.value_of(mi);
    const Tensor& lvv = tp.value_of(li);
    if (tp.requires_grad(mi)) {
      Tensor& gm = tp.grad_buffer(mi);
      for (std::size_t i = 0; i < mv.size(); ++i) gm[i] += g * mv[i];
    }
    if (tp.requires_grad(li)) {
      Tensor& gl = tp.grad_buffer(li);
      for (std::size_t i = 0; i < lvv.size(); ++i) gl[i] += g * 0.5 * (std::exp(lvv[i]) - 1.0);
    }
  }, "kl_standard_normal");
}

}  // namespace egdp::ad
