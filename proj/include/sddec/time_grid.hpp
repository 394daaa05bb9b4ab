#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

namespace sddec {

// Uniform partition of [-delta, T]: nodes t_j = j*h for j in [-n_history, n_forward],
// with t_0 = 0 and t_{n_forward} = T. Times are derived from indices so the grid
// is exactly uniform.
struct TimeGrid {
  double h = 0.0;
  int n_forward = 0;   // N_T
  int n_history = 0;   // N_delta

  TimeGrid() = default;
  TimeGrid(double step, int forward_steps, int history_steps)
      : h(step), n_forward(forward_steps), n_history(history_steps) {
    if (h <= 0.0 || n_forward <= 0 || n_history < 0) {
      throw std::invalid_argument("TimeGrid: need h > 0, N_T > 0, N_delta >= 0");
    }
  }

  static TimeGrid from_horizon(double horizon, int forward_steps, double delay) {
    TimeGrid g(horizon / forward_steps, forward_steps, 0);
    const double ratio = delay / g.h;
    const int n_hist = static_cast<int>(std::lround(ratio));
    if (std::abs(ratio - n_hist) > 1e-9 * (1.0 + std::abs(ratio))) {
      throw std::invalid_argument("TimeGrid: delay " + std::to_string(delay) +
                                  " is not a multiple of the step " + std::to_string(g.h));
    }
    g.n_history = n_hist;
    return g;
  }

  double time(int j) const { return j * h; }
  double horizon() const { return n_forward * h; }
  double delay() const { return n_history * h; }
  int node_count() const { return n_forward + n_history + 1; }
};

}  // namespace sddec
