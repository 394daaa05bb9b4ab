#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "sddec/autodiff.hpp"
#include "sddec/delay.hpp"
#include "sddec/models.hpp"
#include "sddec/ode.hpp"
#include "sddec/path.hpp"
#include "sddec/policy.hpp"
#include "sddec/time_grid.hpp"

namespace sddec {

// Midpoint-quadrature Y(0) on a plain segment (B x n per node), matching the
// discretization used inside rollouts.
inline Mat segment_distributed_delay(const Segment& seg, double lambda, const TimeGrid& grid) {
  const int n_delta = grid.n_history;
  Mat y = Mat::Zero(seg.front().rows(), seg.front().cols());
  for (int j = 0; j < n_delta; ++j) {
    const double s_mid = -grid.delay() + (j + 0.5) * grid.h;
    const double w = grid.h * std::exp(lambda * s_mid) * 0.5;
    y += w * (seg[static_cast<std::size_t>(j)] + seg[static_cast<std::size_t>(j) + 1]);
  }
  return y;
}

inline Mat segment_distributed_delay_infinite(const Segment& seg, double lambda,
                                              const TimeGrid& grid,
                                              const Eigen::VectorXd& pre_history_constant) {
  Mat y = segment_distributed_delay(seg, lambda, grid);
  const double tail_scale = std::exp(-lambda * grid.delay()) / lambda;
  for (long d = 0; d < y.cols(); ++d) y.col(d).array() += tail_scale * pre_history_constant(d);
  return y;
}

// Closed-form optimum of one benchmark: a simulatable policy, the value V0 per
// initial segment, and the tabulated auxiliary curve (P(t) or p(t)).
struct AnalyticalSolution {
  std::shared_ptr<Policy> policy;
  std::function<Eigen::VectorXd(const Segment&)> value;  // V0 per sample row
  std::vector<Mat> curve;                                // nodes j = 0 .. N_T
};

// ---------------------------------------------------------------------------
// LQ: Riccati solve + linear feedback (Proposition 1)
// ---------------------------------------------------------------------------

// Backward Riccati equation
//   Pdot = P B R^-1 B^T P - Atilde^T P - P Atilde - Q,  P(T) = G,
// with Atilde = A1 + e^{lambda delta} A3. Symmetrized after every grid step;
// fails loudly if P loses positive semi-definiteness.
inline std::vector<Mat> solve_riccati(const LqSpec& spec, const TimeGrid& grid, int substeps = 4) {
  const Mat Atilde = spec.A1 + std::exp(spec.lambda * spec.delta) * spec.A3;
  const Mat Rinv = spec.R.llt().solve(Mat::Identity(spec.m, spec.m));
  const Mat BRBt = spec.B * Rinv * spec.B.transpose();
  auto rhs = [&](double, const Mat& P) -> Mat {
    return P * BRBt * P - Atilde.transpose() * P - P * Atilde - spec.Q;
  };
  std::vector<Mat> table = rk4_backward_tabulate(rhs, spec.G, grid, substeps);
  for (std::size_t j = 0; j < table.size(); ++j) {
    table[j] = 0.5 * (table[j] + table[j].transpose()).eval();
    Eigen::SelfAdjointEigenSolver<Mat> es(table[j]);
    if (es.eigenvalues().minCoeff() < -1e-10) {
      throw NumericalError("Riccati solution not PSD at node " + std::to_string(j));
    }
  }
  return table;
}

inline AnalyticalSolution lq_optimal(const LqSpec& spec, const TimeGrid& grid) {
  AnalyticalSolution sol;
  sol.curve = solve_riccati(spec, grid);
  const double e = std::exp(spec.lambda * spec.delta);
  const Mat Rinv = spec.R.llt().solve(Mat::Identity(spec.m, spec.m));
  // Feedback gains K(t_k) = -R^-1 B^T P(t_k), tabulated once.
  std::vector<Mat> gains(sol.curve.size());
  for (std::size_t j = 0; j < sol.curve.size(); ++j) {
    gains[j] = -Rinv * spec.B.transpose() * sol.curve[j];
  }
  sol.policy = std::make_shared<FunctionalPolicy>(
      spec.m, [spec, gains, e](Tape&, const PathBuffer& buf, int k) {
        Var y = distributed_delay(buf, k, spec.lambda, buf.grid());
        Var w = ad::add(buf.node(k), ad::matmul_const(y, Mat(e * spec.A3)));
        return ad::matmul_const(w, gains[static_cast<std::size_t>(k)]);
      });
  // V0 = w^T P(0) w + int_0^T Tr(sigma sigma^T P) ds (trapezoid)
  std::vector<double> traces(sol.curve.size());
  const Mat SS = spec.sigma * spec.sigma.transpose();
  for (std::size_t j = 0; j < sol.curve.size(); ++j) traces[j] = (SS * sol.curve[j]).trace();
  const double trace_integral = trapezoid(traces, grid.h);
  const Mat P0 = sol.curve.front();
  sol.value = [spec, grid, P0, trace_integral, e](const Segment& seg) {
    const Mat y0 = segment_distributed_delay(seg, spec.lambda, grid);
    const Mat w = seg.back() + y0 * (e * spec.A3).transpose();
    Eigen::VectorXd v(w.rows());
    for (long i = 0; i < w.rows(); ++i) {
      v(i) = w.row(i) * P0 * w.row(i).transpose() + trace_integral;
    }
    return v;
  };
  return sol;
}

// ---------------------------------------------------------------------------
// Consumption: scalar backward ODE + proportional consumption (Proposition 2)
// ---------------------------------------------------------------------------

// pdot = (gamma sigma_t^2 / 2 - gamma/(1-gamma) (mu_t + a e^{lambda delta})) p
//        - eta_coeff e^{-beta t/(1-gamma)},   p(T) = terminal.
// terminal = 1 for the plain problem, e^{-beta2 T/(1-gamma)} for the
// discounted-terminal variant; eta_coeff = 1 or eta^{1/(1-gamma)}.
inline std::vector<Mat> solve_consumption_p(const ConsumptionSpec& spec, const TimeGrid& grid,
                                            double terminal = 1.0, double eta_coeff = 1.0,
                                            int substeps = 4) {
  spec.validate();
  const double kappa = 0.5 * spec.gamma * spec.sigma_t * spec.sigma_t -
                       spec.gamma / (1.0 - spec.gamma) * (spec.mu_t + spec.weight());
  auto rhs = [&](double t, const Mat& p) -> Mat {
    Mat d(1, 1);
    d(0, 0) = kappa * p(0, 0) - eta_coeff * std::exp(-spec.beta * t / (1.0 - spec.gamma));
    return d;
  };
  Mat pT(1, 1);
  pT(0, 0) = terminal;
  std::vector<Mat> table = rk4_backward_tabulate(rhs, pT, grid, substeps);
  for (std::size_t j = 0; j < table.size(); ++j) {
    if (table[j](0, 0) <= 0.0) {
      throw NumericalError("consumption p(t) nonpositive at node " + std::to_string(j));
    }
  }
  return table;
}

inline AnalyticalSolution consumption_optimal(const ConsumptionSpec& spec, const TimeGrid& grid) {
  AnalyticalSolution sol;
  sol.curve = solve_consumption_p(spec, grid);
  const double ae = spec.weight();
  std::vector<double> coeff(sol.curve.size());
  for (std::size_t j = 0; j < sol.curve.size(); ++j) {
    const double t = grid.time(static_cast<int>(j));
    coeff[j] = std::exp(-spec.beta * t / (1.0 - spec.gamma)) / sol.curve[j](0, 0);
  }
  sol.policy = std::make_shared<FunctionalPolicy>(
      1, [spec, coeff, ae](Tape&, const PathBuffer& buf, int k) {
        Var y = distributed_delay(buf, k, spec.lambda, buf.grid());
        Var w = ad::add(buf.node(k), ad::scale(y, ae));
        // consumption is nonnegative by constraint
        return ad::relu(ad::scale(w, coeff[static_cast<std::size_t>(k)]));
      });
  const double p0 = sol.curve.front()(0, 0);
  sol.value = [spec, grid, p0, ae](const Segment& seg) {
    const Mat y0 = segment_distributed_delay(seg, spec.lambda, grid);
    Eigen::VectorXd v(seg.back().rows());
    for (long i = 0; i < v.size(); ++i) {
      const double w = seg.back()(i, 0) + ae * y0(i, 0);
      if (w <= 0.0) throw NumericalError("consumption V0: nonpositive composite wealth");
      v(i) = std::pow(p0, 1.0 - spec.gamma) * std::pow(w, spec.gamma) / spec.gamma;
    }
    return v;
  };
  return sol;
}

// ---------------------------------------------------------------------------
// Portfolio: fully closed form (Proposition 3)
// ---------------------------------------------------------------------------

inline AnalyticalSolution portfolio_optimal(const PortfolioSpec& spec, const TimeGrid& grid,
                                            const Eigen::VectorXd& pre_history_constant) {
  spec.validate();
  AnalyticalSolution sol;
  const double eta = spec.eta();
  const double lambda2 = spec.lambda2();
  const double T = grid.horizon();
  sol.curve.resize(static_cast<std::size_t>(grid.n_forward) + 1);
  for (int j = 0; j <= grid.n_forward; ++j) {
    Mat p(1, 1);
    p(0, 0) = lambda2 / spec.beta * (1.0 - std::exp(-spec.beta * (T - grid.time(j))));
    sol.curve[static_cast<std::size_t>(j)] = p;
  }
  sol.policy = std::make_shared<FunctionalPolicy>(
      2, [spec, eta, pre_history_constant](Tape& tape, const PathBuffer& buf, int k) {
        Var x = buf.node(k);
        if (x.value().minCoeff() <= 0.0) {
          throw NumericalError("portfolio analytical policy queried at X <= 0, step k=" +
                               std::to_string(k));
        }
        Var y = distributed_delay_infinite(buf, k, spec.lambda, buf.grid(), tape,
                                           pre_history_constant);
        Var w = ad::add(x, ad::scale(y, eta));
        Var pi = ad::scale(ad::div(w, x), (spec.mu1 - spec.r) / (spec.sigma * spec.sigma));
        Var c = ad::scale(ad::div(w, x), spec.beta);
        return ad::concat_cols({pi, c});
      });
  const double p0 = sol.curve.front()(0, 0);
  sol.value = [spec, grid, p0, eta, pre_history_constant](const Segment& seg) {
    const Mat y0 =
        segment_distributed_delay_infinite(seg, spec.lambda, grid, pre_history_constant);
    Eigen::VectorXd v(seg.back().rows());
    for (long i = 0; i < v.size(); ++i) {
      const double x0 = seg.back()(i, 0);
      if (x0 <= 0.0) throw NumericalError("portfolio V0: nonpositive initial wealth");
      v(i) = p0 + std::log(x0 + eta * y0(i, 0)) / spec.beta;
    }
    return v;
  };
  return sol;
}

}  // namespace sddec
