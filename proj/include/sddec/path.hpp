#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "sddec/autodiff.hpp"
#include "sddec/random.hpp"
#include "sddec/time_grid.hpp"

namespace sddec {

using ad::Mat;
using ad::Tape;
using ad::Var;

class BufferError : public std::runtime_error {
 public:
  explicit BufferError(const std::string& what) : std::runtime_error(what) {}
};

class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

// Deterministic base path on [-delta, 0] plus per-node white noise.
struct InitialSegmentSpec {
  std::function<Eigen::VectorXd(double)> base;
  double noise_std = 0.0;
  std::optional<double> positivity_floor;
  int state_dim = 1;
  // Truncated infinite-memory setup: the oldest node is the exact pre-history
  // constant; noise only perturbs the interior of the window.
  bool constant_tail = false;

  static InitialSegmentSpec constant(const Eigen::VectorXd& x0, double noise_std,
                                     std::optional<double> floor = std::nullopt,
                                     bool constant_tail = false) {
    InitialSegmentSpec s;
    s.base = [x0](double) { return x0; };
    s.noise_std = noise_std;
    s.positivity_floor = floor;
    s.state_dim = static_cast<int>(x0.size());
    s.constant_tail = constant_tail;
    return s;
  }
};

// Plain (non-differentiable) history segment: matrices of shape B x n for grid
// nodes j = -N_delta .. 0, stored in that order.
using Segment = std::vector<Mat>;

// Each row (sample) gets its own seeded stream, so the draw is independent of
// batch composition and worker count.
inline Segment sample_initial_segment(const InitialSegmentSpec& spec, const TimeGrid& grid,
                                      const std::vector<std::uint64_t>& seeds) {
  const int n = spec.state_dim;
  const int batch = static_cast<int>(seeds.size());
  Segment seg(grid.n_history + 1, Mat(batch, n));
  for (int i = 0; i < batch; ++i) {
    NormalSampler normal(seeds[static_cast<std::size_t>(i)]);
    for (int idx = 0; idx <= grid.n_history; ++idx) {
      const int j = idx - grid.n_history;
      Eigen::VectorXd v = spec.base(grid.time(j));
      if (static_cast<int>(v.size()) != n) {
        throw std::invalid_argument("initial segment base returned wrong dimension");
      }
      const bool keep_exact = spec.constant_tail && idx == 0;
      for (int d = 0; d < n; ++d) {
        double x = v(d);
        if (!keep_exact && spec.noise_std > 0.0) x += spec.noise_std * normal();
        if (spec.positivity_floor && x < *spec.positivity_floor) x = *spec.positivity_floor;
        seg[static_cast<std::size_t>(idx)](i, d) = x;
      }
    }
  }
  return seg;
}

// Brownian increments dW(t_k), k = 0 .. N_T-1, each B x l with variance h.
struct BrownianBatch {
  std::vector<Mat> increments;

  static BrownianBatch sample(const TimeGrid& grid, int noise_dim,
                              const std::vector<std::uint64_t>& seeds) {
    const int batch = static_cast<int>(seeds.size());
    BrownianBatch b;
    b.increments.assign(static_cast<std::size_t>(grid.n_forward), Mat(batch, noise_dim));
    const double sqrt_h = std::sqrt(grid.h);
    for (int i = 0; i < batch; ++i) {
      NormalSampler normal(seeds[static_cast<std::size_t>(i)]);
      for (int k = 0; k < grid.n_forward; ++k) {
        for (int d = 0; d < noise_dim; ++d) {
          b.increments[static_cast<std::size_t>(k)](i, d) = sqrt_h * normal();
        }
      }
    }
    return b;
  }

  static BrownianBatch zeros(const TimeGrid& grid, int noise_dim, int batch) {
    BrownianBatch b;
    b.increments.assign(static_cast<std::size_t>(grid.n_forward), Mat::Zero(batch, noise_dim));
    return b;
  }
};

// State values X(t_j) over the grid as tape Vars (B x n each). History nodes
// are constant leaves; forward nodes are appended by the rollout.
class PathBuffer {
 public:
  PathBuffer(const TimeGrid& grid, int state_dim, int batch)
      : grid_(grid),
        state_dim_(state_dim),
        batch_(batch),
        nodes_(static_cast<std::size_t>(grid.node_count())),
        filled_up_to_(-grid.n_history - 1) {}

  // Installs the history segment as non-differentiable leaves.
  void fill_history(Tape& tape, const Segment& segment) {
    if (static_cast<int>(segment.size()) != grid_.n_history + 1) {
      throw BufferError("segment has " + std::to_string(segment.size()) + " nodes, grid needs " +
                        std::to_string(grid_.n_history + 1));
    }
    for (int idx = 0; idx <= grid_.n_history; ++idx) {
      const auto& m = segment[static_cast<std::size_t>(idx)];
      if (m.rows() != batch_ || m.cols() != state_dim_) {
        throw BufferError("segment node shape mismatch");
      }
      nodes_[static_cast<std::size_t>(idx)] = tape.leaf(m, false);
    }
    filled_up_to_ = 0;
  }

  void append(const Var& x) {
    const int j = filled_up_to_ + 1;
    if (j > grid_.n_forward) throw BufferError("append past end of grid");
    const Mat& v = x.value();
    if (v.rows() != batch_ || v.cols() != state_dim_) {
      throw BufferError("appended state has shape " + ad::shape_str(v) + ", expected " +
                        std::to_string(batch_) + "x" + std::to_string(state_dim_));
    }
    nodes_[index_of(j)] = x;
    filled_up_to_ = j;
  }

  Var node(int j) const {
    if (j < -grid_.n_history || j > filled_up_to_) {
      throw BufferError("node t_" + std::to_string(j) + " not populated (filled up to t_" +
                        std::to_string(filled_up_to_) + ")");
    }
    return nodes_[index_of(j)];
  }

  // Lag window (X(t_{k-L}), ..., X(t_k)) flattened to B x n(L+1).
  Var window(int k, int lag_steps) const {
    if (lag_steps < 0) throw BufferError("negative lag window");
    std::vector<Var> parts;
    parts.reserve(static_cast<std::size_t>(lag_steps) + 1);
    for (int j = k - lag_steps; j <= k; ++j) parts.push_back(node(j));
    return ad::concat_cols(parts);
  }

  int filled_up_to() const { return filled_up_to_; }
  const TimeGrid& grid() const { return grid_; }
  int state_dim() const { return state_dim_; }
  int batch() const { return batch_; }

 private:
  std::size_t index_of(int j) const { return static_cast<std::size_t>(j + grid_.n_history); }

  TimeGrid grid_;
  int state_dim_;
  int batch_;
  std::vector<Var> nodes_;
  int filled_up_to_;
};

}  // namespace sddec
