#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

// Reverse-mode autodiff on a per-rollout tape.
//
// Values are dense row-major batches: a "vector" quantity of dimension d for a
// batch of B samples is stored as a B x d matrix; scalars are 1 x 1. Network
// parameters are stored in their natural shapes (weight d2 x d1, bias 1 x d2)
// and shared across the batch by the affine op. There is no general
// broadcasting: binary elementwise ops accept equal shapes or a 1 x 1 operand.

namespace sddec::ad {

using Mat = Eigen::MatrixXd;

class ShapeError : public std::runtime_error {
 public:
  explicit ShapeError(const std::string& what) : std::runtime_error(what) {}
};

inline std::string shape_str(const Mat& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

class Tape;

struct Var {
  Tape* tape = nullptr;
  int id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  const Mat& value() const;
  const Mat& grad() const;
  bool requires_grad() const;
};

class Tape {
 public:
  Tape() { nodes_.reserve(1024); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Mat value, bool requires_grad = false) {
    return push(std::move(value), requires_grad, {});
  }

  Var scalar(double v, bool requires_grad = false) {
    Mat m(1, 1);
    m(0, 0) = v;
    return leaf(std::move(m), requires_grad);
  }

  std::size_t size() const { return nodes_.size(); }

  const Mat& value(const Var& v) const { return nodes_[check(v)].value; }

  // Zero-filled if the node never received any upstream gradient.
  const Mat& grad(const Var& v) const {
    const Node& n = nodes_[check(v)];
    if (n.grad.size() == 0) {
      zero_ = Mat::Zero(n.value.rows(), n.value.cols());
      return zero_;
    }
    return n.grad;
  }

  bool requires_grad(const Var& v) const { return nodes_[check(v)].requires_grad; }

  // Backward pass from a scalar root. Visits each node exactly once, in
  // reverse creation order; safe to call once per tape.
  void backward(const Var& root) {
    const Node& r = nodes_[check(root)];
    if (r.value.rows() != 1 || r.value.cols() != 1) {
      throw ShapeError("backward: root must be scalar, got " + shape_str(r.value));
    }
    nodes_[root.id].grad = Mat::Ones(1, 1);
    for (int i = root.id; i >= 0; --i) {
      Node& n = nodes_[i];
      if (!n.requires_grad || n.grad.size() == 0 || !n.backprop) continue;
      n.backprop(*this, n.grad);
    }
  }

  // --- used by op implementations ---

  Var push(Mat value, bool requires_grad, std::function<void(Tape&, const Mat&)> backprop) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.backprop = std::move(backprop);
    nodes_.push_back(std::move(n));
    Var v;
    v.tape = this;
    v.id = static_cast<int>(nodes_.size()) - 1;
    return v;
  }

  void accumulate(int id, const Mat& g) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

 private:
  struct Node {
    Mat value;
    Mat grad;
    bool requires_grad = false;
    std::function<void(Tape&, const Mat&)> backprop;
  };

  std::size_t check(const Var& v) const {
    if (v.tape != this || v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size()) {
      throw std::logic_error("Var does not belong to this tape");
    }
    return static_cast<std::size_t>(v.id);
  }

  std::vector<Node> nodes_;
  mutable Mat zero_;
};

inline const Mat& Var::value() const { return tape->value(*this); }
inline const Mat& Var::grad() const { return tape->grad(*this); }
inline bool Var::requires_grad() const { return tape->requires_grad(*this); }

namespace detail {

inline void require_same_tape(const Var& a, const Var& b) {
  if (a.tape != b.tape) throw std::logic_error("operands live on different tapes");
}

inline bool is_scalar(const Mat& m) { return m.rows() == 1 && m.cols() == 1; }

// Collapses a full-shape gradient back onto a broadcast 1x1 operand.
inline Mat reduce_to(const Mat& g, long rows, long cols) {
  if (g.rows() == rows && g.cols() == cols) return g;
  Mat r(1, 1);
  r(0, 0) = g.sum();
  return r;
}

}  // namespace detail

// Generic elementwise binary op; fn and the two partials are evaluated on the
// broadcast (common-shape) operands.
template <typename F, typename DA, typename DB>
Var binary_elementwise(const char* name, const Var& a, const Var& b, F fn, DA dfda, DB dfdb) {
  detail::require_same_tape(a, b);
  Tape& t = *a.tape;
  const Mat& av = a.value();
  const Mat& bv = b.value();
  const bool a_scalar = detail::is_scalar(av);
  const bool b_scalar = detail::is_scalar(bv);
  if (!a_scalar && !b_scalar && (av.rows() != bv.rows() || av.cols() != bv.cols())) {
    throw ShapeError(std::string(name) + ": shape mismatch " + shape_str(av) + " vs " + shape_str(bv));
  }
  const long rows = a_scalar ? bv.rows() : av.rows();
  const long cols = a_scalar ? bv.cols() : av.cols();
  Mat ab = a_scalar ? Mat::Constant(rows, cols, av(0, 0)) : av;
  Mat bb = b_scalar ? Mat::Constant(rows, cols, bv(0, 0)) : bv;
  Mat out = fn(ab, bb);
  const bool rg = a.requires_grad() || b.requires_grad();
  const int aid = a.id, bid = b.id;
  const long arows = av.rows(), acols = av.cols();
  const long brows = bv.rows(), bcols = bv.cols();
  std::function<void(Tape&, const Mat&)> bp;
  if (rg) {
    bp = [aid, bid, arows, acols, brows, bcols, ab = std::move(ab), bb = std::move(bb), dfda,
          dfdb](Tape& tp, const Mat& g) {
      tp.accumulate(aid, detail::reduce_to(dfda(ab, bb, g), arows, acols));
      tp.accumulate(bid, detail::reduce_to(dfdb(ab, bb, g), brows, bcols));
    };
  }
  return t.push(std::move(out), rg, std::move(bp));
}

// Unary op whose derivative needs only the input value.
template <typename F, typename D>
Var unary_from_input(const Var& a, F fn, D dfda) {
  Tape& t = *a.tape;
  Mat out = fn(a.value());
  const bool rg = a.requires_grad();
  std::function<void(Tape&, const Mat&)> bp;
  if (rg) {
    bp = [aid = a.id, in = a.value(), dfda](Tape& tp, const Mat& g) {
      tp.accumulate(aid, dfda(in, g));
    };
  }
  return t.push(std::move(out), rg, std::move(bp));
}

// Unary op whose derivative needs only the output value (exp, sigmoid, tanh).
template <typename F, typename D>
Var unary_from_output(const Var& a, F fn, D dfda) {
  Tape& t = *a.tape;
  Mat out = fn(a.value());
  const bool rg = a.requires_grad();
  std::function<void(Tape&, const Mat&)> bp;
  if (rg) {
    bp = [aid = a.id, outv = out, dfda](Tape& tp, const Mat& g) {
      tp.accumulate(aid, dfda(outv, g));
    };
  }
  return t.push(std::move(out), rg, std::move(bp));
}

// Unary op with a value-independent derivative (neg, scale, shift).
template <typename F, typename D>
Var unary_stateless(const Var& a, F fn, D dfda) {
  Tape& t = *a.tape;
  Mat out = fn(a.value());
  const bool rg = a.requires_grad();
  std::function<void(Tape&, const Mat&)> bp;
  if (rg) {
    bp = [aid = a.id, dfda](Tape& tp, const Mat& g) { tp.accumulate(aid, dfda(g)); };
  }
  return t.push(std::move(out), rg, std::move(bp));
}

namespace detail {

inline void check_binary(const char* name, const Mat& a, const Mat& b) {
  if (!is_scalar(a) && !is_scalar(b) && (a.rows() != b.rows() || a.cols() != b.cols())) {
    throw ShapeError(std::string(name) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
  }
}

inline Mat broadcast_add(const Mat& a, const Mat& b, double sb) {
  if (is_scalar(a) && !is_scalar(b)) return (sb * b.array() + a(0, 0)).matrix();
  if (is_scalar(b) && !is_scalar(a)) return (a.array() + sb * b(0, 0)).matrix();
  return a + sb * b;
}

}  // namespace detail

inline Var add(const Var& a, const Var& b) {
  detail::require_same_tape(a, b);
  detail::check_binary("add", a.value(), b.value());
  Tape& t = *a.tape;
  Mat out = detail::broadcast_add(a.value(), b.value(), 1.0);
  const bool rg = a.requires_grad() || b.requires_grad();
  std::function<void(Tape&, const Mat&)> bp;
  if (rg) {
    bp = [aid = a.id, bid = b.id, ar = a.value().rows(), ac = a.value().cols(),
          br = b.value().rows(), bc = b.value().cols()](Tape& tp, const Mat& g) {
      tp.accumulate(aid, detail::reduce_to(g, ar, ac));
      tp.accumulate(bid, detail::reduce_to(g, br, bc));
    };
  }
  return t.push(std::move(out), rg, std::move(bp));
}

inline Var sub(const Var& a, const Var& b) {
  detail::require_same_tape(a, b);
  detail::check_binary("sub", a.value(), b.value());
  Tape& t = *a.tape;
  Mat out = detail::broadcast_add(a.value(), b.value(), -1.0);
  const bool rg = a.requires_grad() || b.requires_grad();
  std::function<void(Tape&, const Mat&)> bp;
  if (rg) {
    bp = [aid = a.id, bid = b.id, ar = a.value().rows(), ac = a.value().cols(),
          br = b.value().rows(), bc = b.value().cols()](Tape& tp, const Mat& g) {
      tp.accumulate(aid, detail::reduce_to(g, ar, ac));
      tp.accumulate(bid, detail::reduce_to(Mat(-g), br, bc));
    };
  }
  return t.push(std::move(out), rg, std::move(bp));
}

// Hadamard product (elementwise; either operand may be a broadcast scalar).
inline Var mul(const Var& a, const Var& b) {
  return binary_elementwise(
      "mul", a, b, [](const Mat& x, const Mat& y) -> Mat { return x.cwiseProduct(y); },
      [](const Mat&, const Mat& y, const Mat& g) -> Mat { return g.cwiseProduct(y); },
      [](const Mat& x, const Mat&, const Mat& g) -> Mat { return g.cwiseProduct(x); });
}

inline Var div(const Var& a, const Var& b) {
  return binary_elementwise(
      "div", a, b, [](const Mat& x, const Mat& y) -> Mat { return x.cwiseQuotient(y); },
      [](const Mat&, const Mat& y, const Mat& g) -> Mat { return g.cwiseQuotient(y); },
      [](const Mat& x, const Mat& y, const Mat& g) -> Mat {
        return -g.cwiseProduct(x).cwiseQuotient(y.cwiseProduct(y));
      });
}

inline Var neg(const Var& a) {
  return unary_stateless(
      a, [](const Mat& x) -> Mat { return -x; }, [](const Mat& g) -> Mat { return -g; });
}

inline Var vexp(const Var& a) {
  return unary_from_output(
      a, [](const Mat& x) -> Mat { return x.array().exp().matrix(); },
      [](const Mat& out, const Mat& g) -> Mat { return g.cwiseProduct(out); });
}

inline Var vlog(const Var& a) {
  return unary_from_input(
      a, [](const Mat& x) -> Mat { return x.array().log().matrix(); },
      [](const Mat& in, const Mat& g) -> Mat { return g.cwiseQuotient(in); });
}

inline Var square(const Var& a) {
  return unary_from_input(
      a, [](const Mat& x) -> Mat { return x.cwiseProduct(x); },
      [](const Mat& in, const Mat& g) -> Mat { return 2.0 * g.cwiseProduct(in); });
}

// max{x, 0}; subgradient at 0 is taken as 0.
inline Var max_with_zero(const Var& a) {
  return unary_from_input(
      a, [](const Mat& x) -> Mat { return x.cwiseMax(0.0); },
      [](const Mat& in, const Mat& g) -> Mat {
        return (in.array() > 0.0).select(g, Mat::Zero(g.rows(), g.cols()));
      });
}

inline Var relu(const Var& a) { return max_with_zero(a); }

inline Var sigmoid(const Var& a) {
  return unary_from_output(
      a, [](const Mat& x) -> Mat { return (1.0 / (1.0 + (-x.array()).exp())).matrix(); },
      [](const Mat& out, const Mat& g) -> Mat {
        return g.cwiseProduct((out.array() * (1.0 - out.array())).matrix());
      });
}

inline Var vtanh(const Var& a) {
  return unary_from_output(
      a, [](const Mat& x) -> Mat { return x.array().tanh().matrix(); },
      [](const Mat& out, const Mat& g) -> Mat {
        return g.cwiseProduct((1.0 - out.array().square()).matrix());
      });
}

enum class Activation { ReLU, Identity, Sigmoid, Tanh };

inline Var activation(Activation kind, const Var& x) {
  switch (kind) {
    case Activation::ReLU: return relu(x);
    case Activation::Identity: return x;
    case Activation::Sigmoid: return sigmoid(x);
    case Activation::Tanh: return vtanh(x);
  }
  throw std::logic_error("unknown activation");
}

// x (B x d1) -> x W^T + b (B x d2), with parameters W (d2 x d1), b (1 x d2).
inline Var affine(const Var& W, const Var& x, const Var& b) {
  detail::require_same_tape(W, x);
  detail::require_same_tape(W, b);
  Tape& t = *W.tape;
  const Mat& Wv = W.value();
  const Mat& xv = x.value();
  const Mat& bv = b.value();
  if (xv.cols() != Wv.cols()) {
    throw ShapeError("affine: input " + shape_str(xv) + " incompatible with weight " + shape_str(Wv));
  }
  if (bv.rows() != 1 || bv.cols() != Wv.rows()) {
    throw ShapeError("affine: bias " + shape_str(bv) + " incompatible with weight " + shape_str(Wv));
  }
  Mat out = xv * Wv.transpose();
  out.rowwise() += bv.row(0);
  const bool rg = W.requires_grad() || x.requires_grad() || b.requires_grad();
  std::function<void(Tape&, const Mat&)> bp;
  if (rg) {
    bp = [Wid = W.id, xid = x.id, bid = b.id, Wv, xv](Tape& tp, const Mat& g) {
      tp.accumulate(Wid, g.transpose() * xv);
      tp.accumulate(xid, g * Wv);
      tp.accumulate(bid, g.colwise().sum());
    };
  }
  return t.push(std::move(out), rg, std::move(bp));
}

// x (B x d1) -> x W^T (B x d2) with differentiable W (d2 x d1); affine sans bias.
inline Var matmul_t(const Var& x, const Var& W) {
  detail::require_same_tape(x, W);
  Tape& t = *x.tape;
  const Mat& Wv = W.value();
  const Mat& xv = x.value();
  if (xv.cols() != Wv.cols()) {
    throw ShapeError("matmul_t: input " + shape_str(xv) + " incompatible with weight " + shape_str(Wv));
  }
  Mat out = xv * Wv.transpose();
  const bool rg = W.requires_grad() || x.requires_grad();
  std::function<void(Tape&, const Mat&)> bp;
  if (rg) {
    bp = [Wid = W.id, xid = x.id, Wv, xv](Tape& tp, const Mat& g) {
      tp.accumulate(Wid, g.transpose() * xv);
      tp.accumulate(xid, g * Wv);
    };
  }
  return t.push(std::move(out), rg, std::move(bp));
}

// x (B x d1) times a constant matrix M^T (M is d2 x d1); no gradient into M.
inline Var matmul_const(const Var& x, const Mat& M) {
  Tape& t = *x.tape;
  const Mat& xv = x.value();
  if (xv.cols() != M.cols()) {
    throw ShapeError("matmul_const: input " + shape_str(xv) + " incompatible with matrix " +
                     std::to_string(M.rows()) + "x" + std::to_string(M.cols()));
  }
  Mat out = xv * M.transpose();
  const bool rg = x.requires_grad();
  std::function<void(Tape&, const Mat&)> bp;
  if (rg) {
    bp = [xid = x.id, M](Tape& tp, const Mat& g) { tp.accumulate(xid, g * M); };
  }
  return t.push(std::move(out), rg, std::move(bp));
}

inline Var scale(const Var& a, double c) {
  return unary_stateless(
      a, [c](const Mat& x) -> Mat { return c * x; }, [c](const Mat& g) -> Mat { return c * g; });
}

inline Var add_const(const Var& a, double c) {
  return unary_stateless(
      a, [c](const Mat& x) -> Mat { return (x.array() + c).matrix(); },
      [](const Mat& g) -> Mat { return g; });
}

inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::logic_error("concat_cols: empty");
  Tape& t = *parts.front().tape;
  long rows = parts.front().value().rows();
  long cols = 0;
  bool rg = false;
  for (const Var& p : parts) {
    detail::require_same_tape(parts.front(), p);
    if (p.value().rows() != rows) {
      throw ShapeError("concat_cols: row mismatch " + shape_str(parts.front().value()) + " vs " +
                       shape_str(p.value()));
    }
    cols += p.value().cols();
    rg = rg || p.requires_grad();
  }
  Mat out(rows, cols);
  long off = 0;
  std::vector<std::pair<int, long>> spans;  // (node id, width)
  spans.reserve(parts.size());
  for (const Var& p : parts) {
    const Mat& v = p.value();
    out.middleCols(off, v.cols()) = v;
    spans.emplace_back(p.id, v.cols());
    off += v.cols();
  }
  std::function<void(Tape&, const Mat&)> bp;
  if (rg) {
    bp = [spans = std::move(spans)](Tape& tp, const Mat& g) {
      long o = 0;
      for (const auto& [id, w] : spans) {
        tp.accumulate(id, g.middleCols(o, w));
        o += w;
      }
    };
  }
  return t.push(std::move(out), rg, std::move(bp));
}

inline Var slice_cols(const Var& a, long start, long len) {
  Tape& t = *a.tape;
  const Mat& av = a.value();
  if (start < 0 || len < 0 || start + len > av.cols()) {
    throw ShapeError("slice_cols: [" + std::to_string(start) + ", " + std::to_string(start + len) +
                     ") out of range for " + shape_str(av));
  }
  Mat out = av.middleCols(start, len);
  const bool rg = a.requires_grad();
  std::function<void(Tape&, const Mat&)> bp;
  if (rg) {
    bp = [aid = a.id, start, len, rows = av.rows(), cols = av.cols()](Tape& tp, const Mat& g) {
      Mat full = Mat::Zero(rows, cols);
      full.middleCols(start, len) = g;
      tp.accumulate(aid, full);
    };
  }
  return t.push(std::move(out), rg, std::move(bp));
}

// Sum over columns: (B x d) -> (B x 1).
inline Var rowsum(const Var& a) {
  Tape& t = *a.tape;
  const Mat& av = a.value();
  Mat out = av.rowwise().sum();
  const bool rg = a.requires_grad();
  std::function<void(Tape&, const Mat&)> bp;
  if (rg) {
    bp = [aid = a.id, cols = av.cols()](Tape& tp, const Mat& g) {
      tp.accumulate(aid, g * Mat::Ones(1, cols));
    };
  }
  return t.push(std::move(out), rg, std::move(bp));
}

inline Var sum_all(const Var& a) {
  Tape& t = *a.tape;
  const Mat& av = a.value();
  Mat out(1, 1);
  out(0, 0) = av.sum();
  const bool rg = a.requires_grad();
  std::function<void(Tape&, const Mat&)> bp;
  if (rg) {
    bp = [aid = a.id, rows = av.rows(), cols = av.cols()](Tape& tp, const Mat& g) {
      tp.accumulate(aid, Mat::Constant(rows, cols, g(0, 0)));
    };
  }
  return t.push(std::move(out), rg, std::move(bp));
}

inline Var mean_all(const Var& a) {
  const double n = static_cast<double>(a.value().size());
  return scale(sum_all(a), 1.0 / n);
}

// Fixed linear combination sum_i c_i x_i as a single tape node. Keeps delay
// quadratures from exploding the graph.
inline Var lincomb(const std::vector<Var>& xs, const std::vector<double>& coeffs) {
  if (xs.empty() || xs.size() != coeffs.size()) {
    throw std::logic_error("lincomb: operand/coefficient count mismatch");
  }
  Tape& t = *xs.front().tape;
  const Mat& first = xs.front().value();
  Mat out = Mat::Zero(first.rows(), first.cols());
  bool rg = false;
  std::vector<std::pair<int, double>> terms;
  terms.reserve(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    detail::require_same_tape(xs.front(), xs[i]);
    const Mat& v = xs[i].value();
    if (v.rows() != first.rows() || v.cols() != first.cols()) {
      throw ShapeError("lincomb: shape mismatch " + shape_str(first) + " vs " + shape_str(v));
    }
    out.noalias() += coeffs[i] * v;
    rg = rg || xs[i].requires_grad();
    terms.emplace_back(xs[i].id, coeffs[i]);
  }
  std::function<void(Tape&, const Mat&)> bp;
  if (rg) {
    bp = [terms = std::move(terms)](Tape& tp, const Mat& g) {
      for (const auto& [id, c] : terms) tp.accumulate(id, c * g);
    };
  }
  return t.push(std::move(out), rg, std::move(bp));
}

// Power utility x^gamma / gamma with derivative x^(gamma-1). Defined as 0 with
// zero derivative for x <= 0, where the utility is not defined; the state
// positivity penalty keeps trajectories away from that region.
inline Var pow_utility(const Var& a, double gamma) {
  return unary_from_input(
      a,
      [gamma](const Mat& x) -> Mat {
        return (x.array() > 0.0).select(x.array().pow(gamma).matrix() / gamma,
                                        Mat::Zero(x.rows(), x.cols()));
      },
      [gamma](const Mat& in, const Mat& g) -> Mat {
        Mat d = (in.array() > 0.0)
                    .select(in.array().pow(gamma - 1.0).matrix(), Mat::Zero(in.rows(), in.cols()));
        return g.cwiseProduct(d);
      });
}

// log(max(x, floor)); keeps log utilities finite when a clamped control hits 0.
inline Var log_floored(const Var& a, double floor_value) {
  return unary_from_input(
      a,
      [floor_value](const Mat& x) -> Mat { return x.cwiseMax(floor_value).array().log().matrix(); },
      [floor_value](const Mat& in, const Mat& g) -> Mat {
        return g.cwiseQuotient(in.cwiseMax(floor_value));
      });
}

}  // namespace sddec::ad
