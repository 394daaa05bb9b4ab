#pragma once

#include <cmath>
#include <vector>

#include "sddec/autodiff.hpp"
#include "sddec/path.hpp"
#include "sddec/time_grid.hpp"

namespace sddec {

// Distributed delay Y(t_k) = int_{-delta}^0 e^{lambda s} X(t_k + s) ds by the
// midpoint rule: the exponential weight is evaluated exactly at the interval
// midpoint and the state is averaged between the two surrounding nodes. Exact
// for constant and linear paths when lambda = 0.
inline Var distributed_delay(const PathBuffer& buf, int k, double lambda, const TimeGrid& grid) {
  const int n_delta = grid.n_history;
  buf.node(k - n_delta);  // raises BufferError when history is missing
  std::vector<Var> nodes;
  std::vector<double> coeffs(static_cast<std::size_t>(n_delta) + 1, 0.0);
  nodes.reserve(static_cast<std::size_t>(n_delta) + 1);
  for (int j = 0; j <= n_delta; ++j) nodes.push_back(buf.node(k - n_delta + j));
  const double h = grid.h;
  for (int j = 0; j < n_delta; ++j) {
    const double s_mid = -grid.delay() + (j + 0.5) * h;
    const double w = h * std::exp(lambda * s_mid) * 0.5;
    coeffs[static_cast<std::size_t>(j)] += w;
    coeffs[static_cast<std::size_t>(j) + 1] += w;
  }
  return ad::lincomb(nodes, coeffs);
}

// Z(t_k) = X(t_k - delta).
inline Var discrete_delay(const PathBuffer& buf, int k, const TimeGrid& grid) {
  return buf.node(k - grid.n_history);
}

// Infinite-memory variant: Y(t_k) = int_{-inf}^0 e^{lambda s} X(t_k + s) ds,
// with X constant before the buffered window [-W, 0] (W = grid.delay()). The
// pre-window tail integrates in closed form to c e^{lambda(-W - t_k)} / lambda;
// the buffered part [-W, t_k] uses the same midpoint quadrature as above.
inline Var distributed_delay_infinite(const PathBuffer& buf, int k, double lambda,
                                      const TimeGrid& grid, Tape& tape,
                                      const Eigen::VectorXd& pre_history_constant) {
  if (lambda <= 0.0) throw std::invalid_argument("infinite-memory delay needs lambda > 0");
  const int n_delta = grid.n_history;
  buf.node(-n_delta);
  buf.node(k);
  const double h = grid.h;
  const double t_k = grid.time(k);
  const int intervals = n_delta + k;  // absolute times -W .. t_k
  std::vector<Var> nodes;
  std::vector<double> coeffs(static_cast<std::size_t>(intervals) + 1, 0.0);
  nodes.reserve(static_cast<std::size_t>(intervals) + 1);
  for (int j = -n_delta; j <= k; ++j) nodes.push_back(buf.node(j));
  for (int j = 0; j < intervals; ++j) {
    const double s_mid = grid.time(-n_delta + j) + 0.5 * h - t_k;
    const double w = h * std::exp(lambda * s_mid) * 0.5;
    coeffs[static_cast<std::size_t>(j)] += w;
    coeffs[static_cast<std::size_t>(j) + 1] += w;
  }
  Var quad = ad::lincomb(nodes, coeffs);
  const double tail_scale = std::exp(lambda * (-grid.delay() - t_k)) / lambda;
  Mat tail(buf.batch(), buf.state_dim());
  for (int d = 0; d < buf.state_dim(); ++d) {
    tail.col(d).setConstant(tail_scale * pre_history_constant(d));
  }
  return ad::add(quad, tape.leaf(std::move(tail), false));
}

}  // namespace sddec
