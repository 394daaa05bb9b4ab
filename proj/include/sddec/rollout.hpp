#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "sddec/autodiff.hpp"
#include "sddec/delay.hpp"
#include "sddec/models.hpp"
#include "sddec/path.hpp"
#include "sddec/policy.hpp"

namespace sddec {

inline Observables observe(const DynamicsModel& model, Tape& tape, const PathBuffer& buf, int k) {
  Observables obs;
  obs.x = buf.node(k);
  obs.t = buf.grid().time(k);
  if (model.needs_y) {
    obs.y = model.memory == MemoryKind::InfiniteTruncated
                ? distributed_delay_infinite(buf, k, model.lambda, buf.grid(), tape,
                                             model.pre_history_constant)
                : distributed_delay(buf, k, model.lambda, buf.grid());
  }
  if (model.needs_z) obs.z = discrete_delay(buf, k, buf.grid());
  return obs;
}

// One Euler-Maruyama step: X(t_{k+1}) = X(t_k) + b h + sigma dW.
inline Var euler_step(const DynamicsModel& model, Tape& tape, const Observables& obs,
                      const Var& control, const Mat& dW, double h, int k) {
  Var b = model.drift(tape, obs, control);
  Var diff = model.diffusion(tape, obs, control, dW);
  Var next = ad::add(obs.x, ad::add(ad::scale(b, h), diff));
  if (!next.value().allFinite()) {
    throw NumericalError("non-finite state after Euler step k=" + std::to_string(k));
  }
  return next;
}

struct RolloutResult {
  PathBuffer path;
  std::vector<Var> controls;  // pi(t_k), k = 0 .. N_T-1
  Var objective;              // B x 1: sum_k f(t_k,...) h + g(X_T) (problem's own sign)
  Var penalty;                // B x 1: sum_k max(-X(t_{k+1}), 0) h (zero Var when unconstrained)
};

// Unrolls the discretized dynamics under an already-bound policy context.
// Deterministic given (segment, noise, parameters).
inline RolloutResult rollout(const DynamicsModel& model, PolicyContext& ctx, Tape& tape,
                             const Segment& segment, const BrownianBatch& noise,
                             const TimeGrid& grid) {
  const int batch = static_cast<int>(segment.front().rows());
  PathBuffer buf(grid, model.state_dim, batch);
  buf.fill_history(tape, segment);
  ctx.begin(buf);

  std::vector<Var> terms;
  std::vector<double> weights;
  terms.reserve(static_cast<std::size_t>(grid.n_forward) + 1);
  std::vector<Var> penalty_terms;
  std::vector<Var> controls;
  controls.reserve(static_cast<std::size_t>(grid.n_forward));

  for (int k = 0; k < grid.n_forward; ++k) {
    Observables obs = observe(model, tape, buf, k);
    Var control = ctx.act(buf, k);
    terms.push_back(model.running_cost(tape, obs, control));
    weights.push_back(grid.h);
    Var next = euler_step(model, tape, obs, control,
                          noise.increments[static_cast<std::size_t>(k)], grid.h, k);
    buf.append(next);
    if (model.positivity_constrained) {
      penalty_terms.push_back(ad::rowsum(ad::max_with_zero(ad::neg(next))));
    }
    controls.push_back(std::move(control));
  }

  Observables terminal = observe(model, tape, buf, grid.n_forward);
  terms.push_back(model.terminal_cost(tape, terminal));
  weights.push_back(1.0);

  RolloutResult res{std::move(buf), std::move(controls), ad::lincomb(terms, weights), Var{}};
  if (!penalty_terms.empty()) {
    res.penalty = ad::lincomb(penalty_terms,
                              std::vector<double>(penalty_terms.size(), grid.h));
  } else {
    res.penalty = tape.leaf(Mat::Zero(batch, 1), false);
  }
  if (!res.objective.value().allFinite()) {
    throw NumericalError("non-finite rollout objective");
  }
  return res;
}

// Convenience overload binding the policy on the given tape.
inline RolloutResult rollout(const DynamicsModel& model, const Policy& policy, Tape& tape,
                             const Segment& segment, const BrownianBatch& noise,
                             const TimeGrid& grid, bool trainable = true) {
  auto ctx = policy.bind(tape, trainable);
  return rollout(model, *ctx, tape, segment, noise, grid);
}

}  // namespace sddec
