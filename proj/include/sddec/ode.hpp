#pragma once

#include <Eigen/Dense>

#include <functional>
#include <vector>

#include "sddec/time_grid.hpp"

namespace sddec {

// Classical RK4, integrated backward from t_{N_T} = T to t_0 = 0 with
// `substeps` sub-intervals per grid step. Returns the solution tabulated at
// grid nodes j = 0 .. N_T (index j).
inline std::vector<Eigen::MatrixXd> rk4_backward_tabulate(
    const std::function<Eigen::MatrixXd(double, const Eigen::MatrixXd&)>& rhs,
    const Eigen::MatrixXd& terminal, const TimeGrid& grid, int substeps = 4) {
  std::vector<Eigen::MatrixXd> table(static_cast<std::size_t>(grid.n_forward) + 1);
  Eigen::MatrixXd y = terminal;
  table[static_cast<std::size_t>(grid.n_forward)] = y;
  const double dt = -grid.h / substeps;
  for (int j = grid.n_forward; j > 0; --j) {
    double t = grid.time(j);
    for (int s = 0; s < substeps; ++s) {
      const Eigen::MatrixXd k1 = rhs(t, y);
      const Eigen::MatrixXd k2 = rhs(t + 0.5 * dt, y + 0.5 * dt * k1);
      const Eigen::MatrixXd k3 = rhs(t + 0.5 * dt, y + 0.5 * dt * k2);
      const Eigen::MatrixXd k4 = rhs(t + dt, y + dt * k3);
      y += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      t += dt;
    }
    table[static_cast<std::size_t>(j) - 1] = y;
  }
  return table;
}

// Trapezoidal rule over the tabulated forward nodes.
inline double trapezoid(const std::vector<double>& values, double h) {
  if (values.size() < 2) return 0.0;
  double s = 0.5 * (values.front() + values.back());
  for (std::size_t i = 1; i + 1 < values.size(); ++i) s += values[i];
  return s * h;
}

}  // namespace sddec
