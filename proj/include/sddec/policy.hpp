#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "sddec/autodiff.hpp"
#include "sddec/path.hpp"
#include "sddec/time_grid.hpp"

namespace sddec {

struct Parameter {
  std::string name;
  Mat value;
};

namespace detail {

inline double uniform01(std::mt19937_64& rng) {
  return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
}

// Glorot-uniform fill on a block, scale sqrt(6 / (fan_in + fan_out)).
inline void glorot_fill(Eigen::Ref<Mat> block, int fan_in, int fan_out, std::mt19937_64& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (long r = 0; r < block.rows(); ++r) {
    for (long c = 0; c < block.cols(); ++c) {
      block(r, c) = a * (2.0 * uniform01(rng) - 1.0);
    }
  }
}

}  // namespace detail

// Per-rollout handle: parameters bound as leaves on one tape plus any
// recurrent state. One context per tape/chunk; contexts are never shared.
class PolicyContext {
 public:
  virtual ~PolicyContext() = default;
  virtual void begin(const PathBuffer& buf) {}
  virtual Var act(const PathBuffer& buf, int k) = 0;
  // Leaf Vars of the bound parameters, in Policy::parameters() order.
  virtual std::vector<Var> bound_params() const { return {}; }
};

class Policy {
 public:
  virtual ~Policy() = default;
  virtual int control_dim() const = 0;
  virtual std::unique_ptr<PolicyContext> bind(Tape& tape, bool trainable) const = 0;

  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
    return n;
  }

 protected:
  std::vector<Parameter> params_;
};

namespace detail {

// ReLU on the clamped output coordinates only.
inline Var apply_clamp(const Var& out, const std::vector<bool>& clamp_mask) {
  bool any = false, all = true;
  for (bool b : clamp_mask) {
    any = any || b;
    all = all && b;
  }
  if (!any) return out;
  if (all) return ad::relu(out);
  std::vector<Var> cols;
  cols.reserve(clamp_mask.size());
  for (std::size_t i = 0; i < clamp_mask.size(); ++i) {
    Var c = ad::slice_cols(out, static_cast<long>(i), 1);
    cols.push_back(clamp_mask[i] ? ad::relu(c) : c);
  }
  return ad::concat_cols(cols);
}

}  // namespace detail

// Lag-window feedforward policy: input (X(t_{k-L}), ..., X(t_k), t_k), ReLU
// hidden layers, identity output, optional per-coordinate ReLU clamp.
// Parameters are shared across all timestamps.
class FeedforwardPolicy : public Policy {
 public:
  FeedforwardPolicy(int state_dim, int lag_steps, std::vector<int> hidden_widths, int control_dim,
                    std::vector<bool> clamp_mask = {})
      : state_dim_(state_dim),
        lag_steps_(lag_steps),
        control_dim_(control_dim),
        clamp_mask_(std::move(clamp_mask)) {
    if (lag_steps_ < 0) throw std::invalid_argument("FeedforwardPolicy: negative lag window");
    if (!clamp_mask_.empty() && static_cast<int>(clamp_mask_.size()) != control_dim_) {
      throw std::invalid_argument("FeedforwardPolicy: clamp mask size != control dim");
    }
    dims_.push_back(state_dim_ * (lag_steps_ + 1) + 1);
    for (int w : hidden_widths) dims_.push_back(w);
    dims_.push_back(control_dim_);
    for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
      const int in = dims_[l], out = dims_[l + 1];
      params_.push_back({"ff.W" + std::to_string(l), Mat::Zero(out, in)});
      params_.push_back({"ff.b" + std::to_string(l), Mat::Zero(1, out)});
    }
  }

  int control_dim() const override { return control_dim_; }
  int lag_steps() const { return lag_steps_; }
  int input_dim() const { return dims_.front(); }

  void init_parameters(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
      detail::glorot_fill(params_[2 * l].value, dims_[l], dims_[l + 1], rng);
      params_[2 * l + 1].value.setZero();
    }
    // Clamped coordinates start with a small positive bias so the control is
    // active (not pinned at the ReLU kink) from the first step.
    if (!clamp_mask_.empty()) {
      Mat& out_bias = params_.back().value;
      for (int i = 0; i < control_dim_; ++i) {
        if (clamp_mask_[static_cast<std::size_t>(i)]) out_bias(0, i) = 0.1;
      }
    }
  }

  std::unique_ptr<PolicyContext> bind(Tape& tape, bool trainable) const override {
    struct Ctx : PolicyContext {
      const FeedforwardPolicy* p;
      Tape* tape;
      std::vector<Var> vars;

      std::vector<Var> bound_params() const override { return vars; }

      Var act(const PathBuffer& buf, int k) override {
        Var win = buf.window(k, p->lag_steps_);
        Var t_col = tape->leaf(Mat::Constant(buf.batch(), 1, buf.grid().time(k)), false);
        Var x = ad::concat_cols({win, t_col});
        for (std::size_t l = 0; 2 * l + 1 < vars.size(); ++l) {
          x = ad::affine(vars[2 * l], x, vars[2 * l + 1]);
          const bool last = 2 * (l + 1) >= vars.size();
          if (!last) x = ad::relu(x);
        }
        return p->clamp_mask_.empty() ? x : detail::apply_clamp(x, p->clamp_mask_);
      }
    };
    auto ctx = std::make_unique<Ctx>();
    ctx->p = this;
    ctx->tape = &tape;
    ctx->vars.reserve(params_.size());
    for (const auto& prm : params_) ctx->vars.push_back(tape.leaf(prm.value, trainable));
    return ctx;
  }

 private:
  int state_dim_;
  int lag_steps_;
  int control_dim_;
  std::vector<bool> clamp_mask_;
  std::vector<int> dims_;
};

// LSTM policy. Gate weights are stored fused in blocks [forget; input; output;
// cell] of height d_h each: Wx (4d_h x d_x), Wh (4d_h x d_h), b (1 x 4d_h).
// Input x_k = (X(t_k), t_k); control = W h_k + b_out with optional clamp.
// h, c start at t_{-N_delta} as (X(-delta), 0, ..., 0); the sweep over history
// inputs evolves only (h, c), controls are emitted from t_0 on.
class LstmPolicy : public Policy {
 public:
  LstmPolicy(int state_dim, int hidden_dim, int control_dim, std::vector<bool> clamp_mask = {})
      : state_dim_(state_dim),
        hidden_dim_(hidden_dim),
        control_dim_(control_dim),
        clamp_mask_(std::move(clamp_mask)) {
    if (hidden_dim_ < state_dim_) {
      throw std::invalid_argument("LstmPolicy: hidden dim " + std::to_string(hidden_dim_) +
                                  " < state dim " + std::to_string(state_dim_) +
                                  "; segment-based initialization needs d_h >= n");
    }
    if (!clamp_mask_.empty() && static_cast<int>(clamp_mask_.size()) != control_dim_) {
      throw std::invalid_argument("LstmPolicy: clamp mask size != control dim");
    }
    const int dx = state_dim_ + 1;
    params_.push_back({"lstm.Wx", Mat::Zero(4 * hidden_dim_, dx)});
    params_.push_back({"lstm.Wh", Mat::Zero(4 * hidden_dim_, hidden_dim_)});
    params_.push_back({"lstm.b", Mat::Zero(1, 4 * hidden_dim_)});
    params_.push_back({"lstm.W_out", Mat::Zero(control_dim_, hidden_dim_)});
    params_.push_back({"lstm.b_out", Mat::Zero(1, control_dim_)});
  }

  int control_dim() const override { return control_dim_; }
  int hidden_dim() const { return hidden_dim_; }
  int input_dim() const { return state_dim_ + 1; }

  void init_parameters(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const int dx = state_dim_ + 1;
    for (int g = 0; g < 4; ++g) {
      detail::glorot_fill(params_[0].value.middleRows(g * hidden_dim_, hidden_dim_), dx,
                          hidden_dim_, rng);
      detail::glorot_fill(params_[1].value.middleRows(g * hidden_dim_, hidden_dim_), hidden_dim_,
                          hidden_dim_, rng);
    }
    params_[2].value.setZero();
    params_[2].value.middleCols(0, hidden_dim_).setOnes();  // forget-gate bias
    detail::glorot_fill(params_[3].value, hidden_dim_, control_dim_, rng);
    params_[4].value.setZero();
    if (!clamp_mask_.empty()) {
      for (int i = 0; i < control_dim_; ++i) {
        if (clamp_mask_[static_cast<std::size_t>(i)]) params_[4].value(0, i) = 0.1;
      }
    }
  }

  struct Ctx : PolicyContext {
    const LstmPolicy* p;
    Tape* tape;
    Var Wx, Wh, b, W_out, b_out;
    Var h, c;

    std::vector<Var> bound_params() const override { return {Wx, Wh, b, W_out, b_out}; }

    void begin(const PathBuffer& buf) override {
      const TimeGrid& grid = buf.grid();
      // (X(-delta), 0, ..., 0) padded to d_h
      Var x0 = buf.node(-grid.n_history);
      if (p->hidden_dim_ > p->state_dim_) {
        Var pad = tape->leaf(Mat::Zero(buf.batch(), p->hidden_dim_ - p->state_dim_), false);
        h = ad::concat_cols({x0, pad});
      } else {
        h = x0;
      }
      c = h;
      for (int j = -grid.n_history + 1; j <= -1; ++j) step(buf, j);
    }

    void step(const PathBuffer& buf, int j) {
      Var t_col = tape->leaf(Mat::Constant(buf.batch(), 1, buf.grid().time(j)), false);
      Var x = ad::concat_cols({buf.node(j), t_col});
      Var pre = ad::add(ad::affine(Wx, x, b), ad::matmul_t(h, Wh));
      const int dh = p->hidden_dim_;
      Var f = ad::sigmoid(ad::slice_cols(pre, 0, dh));
      Var i = ad::sigmoid(ad::slice_cols(pre, dh, dh));
      Var o = ad::sigmoid(ad::slice_cols(pre, 2 * dh, dh));
      Var cand = ad::vtanh(ad::slice_cols(pre, 3 * dh, dh));
      c = ad::add(ad::mul(f, c), ad::mul(i, cand));
      h = ad::mul(o, ad::vtanh(c));
    }

    Var act(const PathBuffer& buf, int k) override {
      step(buf, k);
      Var out = ad::affine(W_out, h, b_out);
      return p->clamp_mask_.empty() ? out : detail::apply_clamp(out, p->clamp_mask_);
    }
  };

  std::unique_ptr<PolicyContext> bind(Tape& tape, bool trainable) const override {
    auto ctx = std::make_unique<Ctx>();
    ctx->p = this;
    ctx->tape = &tape;
    ctx->Wx = tape.leaf(params_[0].value, trainable);
    ctx->Wh = tape.leaf(params_[1].value, trainable);
    ctx->b = tape.leaf(params_[2].value, trainable);
    ctx->W_out = tape.leaf(params_[3].value, trainable);
    ctx->b_out = tape.leaf(params_[4].value, trainable);
    return ctx;
  }

 private:
  int state_dim_;
  int hidden_dim_;
  int control_dim_;
  std::vector<bool> clamp_mask_;
};

// Policy given by a closed-form rule built from Var ops (analytical baselines,
// zero policy in tests, ...). Stateless, no parameters.
class FunctionalPolicy : public Policy {
 public:
  using Fn = std::function<Var(Tape&, const PathBuffer&, int)>;

  FunctionalPolicy(int control_dim, Fn fn) : control_dim_(control_dim), fn_(std::move(fn)) {}

  int control_dim() const override { return control_dim_; }

  std::unique_ptr<PolicyContext> bind(Tape& tape, bool) const override {
    struct Ctx : PolicyContext {
      const FunctionalPolicy* p;
      Tape* tape;
      Var act(const PathBuffer& buf, int k) override { return p->fn_(*tape, buf, k); }
    };
    auto ctx = std::make_unique<Ctx>();
    ctx->p = this;
    ctx->tape = &tape;
    return ctx;
  }

 private:
  int control_dim_;
  Fn fn_;
};

}  // namespace sddec
