#pragma once

// Define-by-run reverse-mode differentiation over rank-2 tensors.
//
// A Graph is an append-only tape. Every op validates its operands, computes
// its value eagerly, checks the value is finite and records a closure that
// pushes the node's gradient into its inputs. backward() walks the tape in
// exact reverse construction order, so two identical tapes always produce
// bitwise-identical gradients.

#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ren/errors.hpp"
#include "ren/tensor.hpp"

namespace ren {

/// Handle to a node on a Graph.
struct Var {
  std::size_t id = 0;
};

class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::size_t self)>;

  Var constant(Tensor value) { return push("constant", {}, std::move(value), false, false, {}); }

  /// A trainable leaf. backward() fills its gradient.
  Var parameter(Tensor value) { return push("parameter", {}, std::move(value), true, true, {}); }

  Var record(std::string op, std::vector<std::size_t> inputs, Tensor value, BackwardFn backward) {
    bool needs = false;
    for (std::size_t in : inputs) needs = needs || nodes_[in].requires_grad;
    return push(std::move(op), std::move(inputs), std::move(value), needs, false,
                needs ? std::move(backward) : BackwardFn{});
  }

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  bool is_parameter(Var v) const { return nodes_.at(v.id).is_parameter; }
  const std::string& op(Var v) const { return nodes_.at(v.id).op; }
  std::size_t size() const { return nodes_.size(); }
  std::span<const std::size_t> inputs(Var v) const { return nodes_.at(v.id).inputs; }

  /// Gradient accumulated on a node; zeros when nothing reached it.
  Tensor grad(Var v) const {
    const Node& n = nodes_.at(v.id);
    return n.has_grad ? n.grad : Tensor(n.value.shape());
  }

  /// Mutable gradient buffer, allocated on first touch. Used by op closures.
  Tensor& grad_slot(std::size_t id) {
    Node& n = nodes_[id];
    if (!n.has_grad) {
      n.grad = Tensor(n.value.shape());
      n.has_grad = true;
    }
    return n.grad;
  }

  const Tensor& upstream(std::size_t id) const { return nodes_[id].grad; }

  /// When set, grad_reverse nodes pass gradients through unchanged. Finite-difference
  /// checks use this: the forward value never sees the reversal, only backward does.
  void set_reversal_identity(bool on) { reversal_identity_ = on; }
  bool reversal_identity() const { return reversal_identity_; }

  void backward(Var loss) {
    const Node& root = nodes_.at(loss.id);
    if (root.value.shape() != Shape{1, 1}) {
      throw ContractError("backward: loss must be 1x1, got " + to_string(root.value.shape()));
    }
    for (Node& n : nodes_) {
      n.has_grad = false;
      n.grad = Tensor();
    }
    grad_slot(loss.id)[0] = 1.0;
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.has_grad || !n.backward) continue;
      n.backward(*this, i);
    }
  }

 private:
  struct Node {
    std::string op;
    std::vector<std::size_t> inputs;
    Tensor value;
    Tensor grad;
    bool has_grad = false;
    bool requires_grad = false;
    bool is_parameter = false;
    BackwardFn backward;
  };

  Var push(std::string op, std::vector<std::size_t> inputs, Tensor value, bool requires_grad,
           bool is_parameter, BackwardFn backward) {
    for (std::size_t in : inputs) {
      if (in >= nodes_.size()) throw ContractError(op + ": input node does not exist");
    }
    if (!value.all_finite()) throw NumericError(op + ": produced a non-finite value");
    nodes_.push_back(Node{std::move(op), std::move(inputs), std::move(value), Tensor(), false,
                          requires_grad, is_parameter, std::move(backward)});
    return Var{nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
  bool reversal_identity_ = false;
};

namespace detail {

inline void add_into(Tensor& dst, const Tensor& src, double scale = 1.0) {
  auto d = dst.values();
  auto s = src.values();
  for (std::size_t k = 0; k < d.size(); ++k) d[k] += scale * s[k];
}

// Elementwise unary op: value f(x), local derivative df(x, y).
template <class F, class DF>
Var unary(Graph& g, const char* name, Var x, F f, DF df) {
  const Tensor& in = g.value(x);
  Tensor out(in.shape());
  for (std::size_t k = 0; k < in.size(); ++k) out[k] = f(in[k]);
  const std::size_t xi = x.id;
  return g.record(name, {xi}, std::move(out), [xi, df](Graph& gr, std::size_t self) {
    if (!gr.requires_grad(xi)) return;
    const Tensor& up = gr.upstream(self);
    const Tensor& xv = gr.value(xi);
    const Tensor& yv = gr.value(self);
    Tensor& dx = gr.grad_slot(xi);
    for (std::size_t k = 0; k < up.size(); ++k) dx[k] += up[k] * df(xv[k], yv[k]);
  });
}

}  // namespace detail

inline Var matmul(Graph& g, Var a, Var b) {
  Tensor out = kernels::matmul(g.value(a), g.value(b));
  const std::size_t ai = a.id, bi = b.id;
  return g.record("matmul", {ai, bi}, std::move(out), [ai, bi](Graph& gr, std::size_t self) {
    const Tensor& up = gr.upstream(self);
    if (gr.requires_grad(ai)) detail::add_into(gr.grad_slot(ai), kernels::matmul_nt(up, gr.value(bi)));
    if (gr.requires_grad(bi)) detail::add_into(gr.grad_slot(bi), kernels::matmul_tn(gr.value(ai), up));
  });
}

/// x[m x n] + bias[1 x n] broadcast over rows.
inline Var add_bias(Graph& g, Var x, Var bias) {
  const Tensor& xv = g.value(x);
  const Tensor& bv = g.value(bias);
  if (bv.rows() != 1 || bv.cols() != xv.cols()) {
    throw DimensionError("add_bias: bias " + to_string(bv.shape()) + " does not fit " +
                         to_string(xv.shape()));
  }
  Tensor out = xv;
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += bv[j];
  const std::size_t xi = x.id, bi = bias.id;
  return g.record("add_bias", {xi, bi}, std::move(out), [xi, bi](Graph& gr, std::size_t self) {
    const Tensor& up = gr.upstream(self);
    if (gr.requires_grad(xi)) detail::add_into(gr.grad_slot(xi), up);
    if (gr.requires_grad(bi)) {
      Tensor& db = gr.grad_slot(bi);
      for (std::size_t i = 0; i < up.rows(); ++i)
        for (std::size_t j = 0; j < up.cols(); ++j) db[j] += up(i, j);
    }
  });
}

inline Var add(Graph& g, Var a, Var b) {
  require_same_shape(g.value(a), g.value(b), "add");
  Tensor out = g.value(a);
  detail::add_into(out, g.value(b));
  const std::size_t ai = a.id, bi = b.id;
  return g.record("add", {ai, bi}, std::move(out), [ai, bi](Graph& gr, std::size_t self) {
    const Tensor& up = gr.upstream(self);
    if (gr.requires_grad(ai)) detail::add_into(gr.grad_slot(ai), up);
    if (gr.requires_grad(bi)) detail::add_into(gr.grad_slot(bi), up);
  });
}

inline Var sub(Graph& g, Var a, Var b) {
  require_same_shape(g.value(a), g.value(b), "sub");
  Tensor out = g.value(a);
  detail::add_into(out, g.value(b), -1.0);
  const std::size_t ai = a.id, bi = b.id;
  return g.record("sub", {ai, bi}, std::move(out), [ai, bi](Graph& gr, std::size_t self) {
    const Tensor& up = gr.upstream(self);
    if (gr.requires_grad(ai)) detail::add_into(gr.grad_slot(ai), up);
    if (gr.requires_grad(bi)) detail::add_into(gr.grad_slot(bi), up, -1.0);
  });
}

/// Elementwise product.
inline Var mul(Graph& g, Var a, Var b) {
  const Tensor& av = g.value(a);
  const Tensor& bv = g.value(b);
  require_same_shape(av, bv, "mul");
  Tensor out(av.shape());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = av[k] * bv[k];
  const std::size_t ai = a.id, bi = b.id;
  return g.record("mul", {ai, bi}, std::move(out), [ai, bi](Graph& gr, std::size_t self) {
    const Tensor& up = gr.upstream(self);
    if (gr.requires_grad(ai)) {
      Tensor& d = gr.grad_slot(ai);
      const Tensor& o = gr.value(bi);
      for (std::size_t k = 0; k < up.size(); ++k) d[k] += up[k] * o[k];
    }
    if (gr.requires_grad(bi)) {
      Tensor& d = gr.grad_slot(bi);
      const Tensor& o = gr.value(ai);
      for (std::size_t k = 0; k < up.size(); ++k) d[k] += up[k] * o[k];
    }
  });
}

/// scale * x + shift, elementwise.
inline Var affine(Graph& g, Var x, double scale, double shift = 0.0) {
  return detail::unary(
      g, "affine", x, [scale, shift](double v) { return scale * v + shift; },
      [scale](double, double) { return scale; });
}

inline Var scale(Graph& g, Var x, double s) { return affine(g, x, s, 0.0); }

/// max(0, x); the subgradient at exactly 0 is 0.
inline Var relu(Graph& g, Var x) {
  return detail::unary(
      g, "relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

inline Var sigmoid(Graph& g, Var x) {
  return detail::unary(
      g, "sigmoid", x,
      [](double v) { return kernels::sigmoid(v); },
      [](double, double y) { return y * (1.0 - y); });
}

inline Var log(Graph& g, Var x) {
  return detail::unary(
      g, "log", x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

inline Var square(Graph& g, Var x) {
  return detail::unary(
      g, "square", x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

/// sqrt with the derivative at 0 taken as 0.
inline Var sqrt(Graph& g, Var x) {
  return detail::unary(
      g, "sqrt", x, [](double v) { return std::sqrt(v); },
      [](double, double y) { return y > 0.0 ? 0.5 / y : 0.0; });
}

/// Clamp into [lo, hi]; gradient passes only where the input was inside.
inline Var clamp(Graph& g, Var x, double lo, double hi) {
  return detail::unary(
      g, "clamp", x, [lo, hi](double v) { return std::min(hi, std::max(lo, v)); },
      [lo, hi](double v, double) { return (v >= lo && v <= hi) ? 1.0 : 0.0; });
}

/// Identity forward; backward multiplies the incoming gradient by -lambda.
inline Var grad_reverse(Graph& g, Var x, double lambda) {
  if (!(lambda >= 0.0)) throw ConfigError("grad_reverse: lambda must be >= 0");
  const std::size_t xi = x.id;
  return g.record("grad_reverse", {xi}, g.value(x), [xi, lambda](Graph& gr, std::size_t self) {
    if (!gr.requires_grad(xi)) return;
    detail::add_into(gr.grad_slot(xi), gr.upstream(self), gr.reversal_identity() ? 1.0 : -lambda);
  });
}

/// Copies the value and blocks every gradient.
inline Var detach(Graph& g, Var x) { return g.constant(g.value(x)); }

inline Var softmax_rows(Graph& g, Var x) {
  if (g.value(x).cols() == 0) throw DimensionError("softmax_rows: needs at least one column");
  Tensor out = kernels::softmax_rows(g.value(x));
  const std::size_t xi = x.id;
  return g.record("softmax_rows", {xi}, std::move(out), [xi](Graph& gr, std::size_t self) {
    if (!gr.requires_grad(xi)) return;
    const Tensor& up = gr.upstream(self);
    const Tensor& y = gr.value(self);
    Tensor& dx = gr.grad_slot(xi);
    for (std::size_t i = 0; i < y.rows(); ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < y.cols(); ++j) dot += up(i, j) * y(i, j);
      for (std::size_t j = 0; j < y.cols(); ++j) dx(i, j) += y(i, j) * (up(i, j) - dot);
    }
  });
}

/// Sum of all entries, as a 1x1 tensor.
inline Var sum(Graph& g, Var x) {
  double s = 0.0;
  for (double v : g.value(x).values()) s += v;
  const std::size_t xi = x.id;
  return g.record("sum", {xi}, Tensor(1, 1, s), [xi](Graph& gr, std::size_t self) {
    if (!gr.requires_grad(xi)) return;
    const double up = gr.upstream(self)[0];
    for (double& d : gr.grad_slot(xi).values()) d += up;
  });
}

/// Mean of all entries, as a 1x1 tensor. Requires a non-empty input.
inline Var mean(Graph& g, Var x) {
  const std::size_t n = g.value(x).size();
  if (n == 0) throw ContractError("mean: empty input");
  return scale(g, sum(g, x), 1.0 / static_cast<double>(n));
}

/// Per-row sum: [m x n] -> [m x 1].
inline Var row_sum(Graph& g, Var x) {
  const Tensor& xv = g.value(x);
  Tensor out(xv.rows(), 1);
  for (std::size_t i = 0; i < xv.rows(); ++i)
    for (double v : xv.row_span(i)) out[i] += v;
  const std::size_t xi = x.id;
  return g.record("row_sum", {xi}, std::move(out), [xi](Graph& gr, std::size_t self) {
    if (!gr.requires_grad(xi)) return;
    const Tensor& up = gr.upstream(self);
    Tensor& dx = gr.grad_slot(xi);
    for (std::size_t i = 0; i < dx.rows(); ++i)
      for (double& d : dx.row_span(i)) d += up[i];
  });
}

/// out[i] = x[i, index[i]]: [m x n] -> [m x 1].
inline Var pick(Graph& g, Var x, std::span<const int> index) {
  const Tensor& xv = g.value(x);
  if (index.size() != xv.rows()) {
    throw DimensionError("pick: " + std::to_string(index.size()) + " indices for " +
                         to_string(xv.shape()));
  }
  Tensor out(xv.rows(), 1);
  for (std::size_t i = 0; i < xv.rows(); ++i) {
    if (index[i] < 0 || static_cast<std::size_t>(index[i]) >= xv.cols()) {
      throw ContractError("pick: index " + std::to_string(index[i]) + " out of range [0, " +
                          std::to_string(xv.cols()) + ")");
    }
    out[i] = xv(i, static_cast<std::size_t>(index[i]));
  }
  const std::size_t xi = x.id;
  std::vector<int> idx(index.begin(), index.end());
  return g.record("pick", {xi}, std::move(out), [xi, idx](Graph& gr, std::size_t self) {
    if (!gr.requires_grad(xi)) return;
    const Tensor& up = gr.upstream(self);
    Tensor& dx = gr.grad_slot(xi);
    for (std::size_t i = 0; i < idx.size(); ++i) dx(i, static_cast<std::size_t>(idx[i])) += up[i];
  });
}

inline Var slice_rows(Graph& g, Var x, std::size_t begin, std::size_t end) {
  Tensor out = kernels::slice_rows(g.value(x), begin, end);
  const std::size_t xi = x.id;
  return g.record("slice_rows", {xi}, std::move(out), [xi, begin](Graph& gr, std::size_t self) {
    if (!gr.requires_grad(xi)) return;
    const Tensor& up = gr.upstream(self);
    Tensor& dx = gr.grad_slot(xi);
    const std::size_t offset = begin * dx.cols();
    for (std::size_t k = 0; k < up.size(); ++k) dx[offset + k] += up[k];
  });
}

inline Var concat_rows(Graph& g, Var top, Var bottom) {
  Tensor out = kernels::concat_rows(g.value(top), g.value(bottom));
  const std::size_t ti = top.id, bi = bottom.id;
  return g.record("concat_rows", {ti, bi}, std::move(out), [ti, bi](Graph& gr, std::size_t self) {
    const Tensor& up = gr.upstream(self);
    const std::size_t split = gr.value(ti).size();
    if (gr.requires_grad(ti)) {
      Tensor& d = gr.grad_slot(ti);
      for (std::size_t k = 0; k < split; ++k) d[k] += up[k];
    }
    if (gr.requires_grad(bi)) {
      Tensor& d = gr.grad_slot(bi);
      for (std::size_t k = 0; k < d.size(); ++k) d[k] += up[split + k];
    }
  });
}

/// Row-wise flattened outer product: row i is f_i (x) p_i with (j, k) -> j * c + k.
inline Var outer_rows(Graph& g, Var f, Var p) {
  const Tensor& fv = g.value(f);
  const Tensor& pv = g.value(p);
  if (fv.rows() != pv.rows()) {
    throw DimensionError("outer_rows: batch sizes differ for " + to_string(fv.shape()) + " and " +
                         to_string(pv.shape()));
  }
  const std::size_t d = fv.cols(), c = pv.cols();
  Tensor out(fv.rows(), d * c);
  for (std::size_t i = 0; i < fv.rows(); ++i)
    for (std::size_t j = 0; j < d; ++j)
      for (std::size_t k = 0; k < c; ++k) out(i, j * c + k) = fv(i, j) * pv(i, k);
  const std::size_t fi = f.id, pi = p.id;
  return g.record("outer_rows", {fi, pi}, std::move(out), [fi, pi, d, c](Graph& gr, std::size_t self) {
    const Tensor& up = gr.upstream(self);
    const Tensor& fv2 = gr.value(fi);
    const Tensor& pv2 = gr.value(pi);
    if (gr.requires_grad(fi)) {
      Tensor& df = gr.grad_slot(fi);
      for (std::size_t i = 0; i < up.rows(); ++i)
        for (std::size_t j = 0; j < d; ++j) {
          double s = 0.0;
          for (std::size_t k = 0; k < c; ++k) s += up(i, j * c + k) * pv2(i, k);
          df(i, j) += s;
        }
    }
    if (gr.requires_grad(pi)) {
      Tensor& dp = gr.grad_slot(pi);
      for (std::size_t i = 0; i < up.rows(); ++i)
        for (std::size_t k = 0; k < c; ++k) {
          double s = 0.0;
          for (std::size_t j = 0; j < d; ++j) s += up(i, j * c + k) * fv2(i, j);
          dp(i, k) += s;
        }
    }
  });
}

}  // namespace ren
