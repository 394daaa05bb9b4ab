#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "sddec/autodiff.hpp"
#include "sddec/models.hpp"
#include "sddec/path.hpp"
#include "sddec/policy.hpp"
#include "sddec/rollout.hpp"

namespace sddec {

// Piecewise-constant learning rate: (start_step, rate) with strictly
// increasing start steps; first entry must start at step 0.
struct LrSchedule {
  std::vector<std::pair<int, double>> points;

  void validate() const {
    if (points.empty() || points.front().first != 0) {
      throw std::invalid_argument("LrSchedule: must start at step 0");
    }
    for (std::size_t i = 0; i < points.size(); ++i) {
      if (points[i].second <= 0.0) throw std::invalid_argument("LrSchedule: rates must be > 0");
      if (i > 0 && points[i].first <= points[i - 1].first) {
        throw std::invalid_argument("LrSchedule: steps must be strictly increasing");
      }
    }
  }

  double rate_at(int step) const {
    double r = points.front().second;
    for (const auto& [s, rate] : points) {
      if (step >= s) r = rate;
    }
    return r;
  }
};

struct TrainConfig {
  int batch_size = 128;
  int total_steps = 1000;
  LrSchedule schedule{{{0, 1e-3}}};
  int validation_period = 200;
  int validation_size = 256;
  int test_size = 16384;
  double penalty_coeff = 0.0;  // xi
  std::uint64_t seed = 0;
  int chunk_size = 32;   // fixed batch chunking; independent of thread count
  int threads = 1;
  double grad_clip = 0.0;  // global-norm clip, 0 = off

  void validate() const {
    if (batch_size <= 0 || total_steps < 0 || chunk_size <= 0 || threads <= 0) {
      throw std::invalid_argument("TrainConfig: sizes must be positive");
    }
    schedule.validate();
  }
};

// Loss per Eq-style discretized objective plus the soft state constraint:
//   mean over batch of sign * (sum_k f_k h + g) + xi * sum_k max(-X(t_{k+1}), 0) h.
// Maximization negates the objective but never the penalty.
inline Var assemble_loss(const DynamicsModel& model, const RolloutResult& res, double xi,
                         bool mean_reduce = true) {
  Var per_sample = ad::add(ad::scale(res.objective, model.sign), ad::scale(res.penalty, xi));
  Var out = mean_reduce ? ad::mean_all(per_sample) : ad::sum_all(per_sample);
  if (!out.value().allFinite()) throw NumericalError("non-finite loss");
  return out;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamState {
  std::vector<Mat> m;
  std::vector<Mat> v;
  long step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  explicit AdamState(const std::vector<Parameter>& params) {
    m.reserve(params.size());
    v.reserve(params.size());
    for (const auto& p : params) {
      m.push_back(Mat::Zero(p.value.rows(), p.value.cols()));
      v.push_back(Mat::Zero(p.value.rows(), p.value.cols()));
    }
  }
};

inline void adam_step(std::vector<Parameter>& params, const std::vector<Mat>& grads,
                      AdamState& state, double lr) {
  if (params.size() != grads.size() || params.size() != state.m.size()) {
    throw std::invalid_argument("adam_step: parameter/gradient count mismatch");
  }
  state.step += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Mat& g = grads[i];
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
    state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g.cwiseProduct(g);
    const Mat mhat = state.m[i] / bc1;
    const Mat vhat = state.v[i] / bc2;
    params[i].value -=
        lr * mhat.cwiseQuotient((vhat.cwiseSqrt().array() + state.eps).matrix());
  }
}

// ---------------------------------------------------------------------------
// Batched episode evaluation, chunked for parallelism and determinism
// ---------------------------------------------------------------------------

namespace detail {

// Seed tags for independent sub-streams of one experiment seed.
enum SeedTag : std::uint64_t {
  kTrainSegment = 1,
  kTrainNoise = 2,
  kValSegment = 3,
  kValNoise = 4,
  kEvalSegment = 5,
  kEvalNoise = 6,
};

inline std::vector<std::uint64_t> sample_seeds(std::uint64_t base, std::uint64_t tag,
                                               std::uint64_t first_id, int count) {
  std::vector<std::uint64_t> s(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) s[static_cast<std::size_t>(i)] = derive_seed(base, tag, first_id + static_cast<std::uint64_t>(i));
  return s;
}

struct ChunkStats {
  double objective_sum = 0.0;
  double objective_sq_sum = 0.0;
  int violations = 0;
  std::vector<Mat> grads;  // empty when not training
};

}  // namespace detail

// Per-sample outputs of a no-gradient sweep.
struct SweepResult {
  std::vector<double> objectives;  // problem-native sign (cost or utility)
  int violations = 0;              // paths with min_k X(t_k) < 0
};

struct EvalReport {
  double mean_objective = 0.0;
  std::optional<double> standard_error;
  double violation_rate = 0.0;
  double wall_seconds = 0.0;
  int paths = 0;
};

namespace detail {

inline int count_violations(const PathBuffer& buf) {
  const int batch = buf.batch();
  std::vector<bool> bad(static_cast<std::size_t>(batch), false);
  for (int k = 1; k <= buf.grid().n_forward; ++k) {
    const Mat& v = buf.node(k).value();
    for (int i = 0; i < batch; ++i) {
      if (v.row(i).minCoeff() < 0.0) bad[static_cast<std::size_t>(i)] = true;
    }
  }
  return static_cast<int>(std::count(bad.begin(), bad.end(), true));
}

}  // namespace detail

// Runs the policy over n_paths fresh episodes drawn from (seed, tag pair) and
// reports the objective without penalty. Two policies evaluated with the same
// seed see identical segments and Brownian increments (common random numbers).
inline SweepResult sweep(const DynamicsModel& model, const Policy& policy, const TimeGrid& grid,
                         const InitialSegmentSpec& segspec, int n_paths, std::uint64_t seed,
                         int chunk_size = 32, int threads = 1,
                         std::uint64_t seg_tag = detail::kEvalSegment,
                         std::uint64_t noise_tag = detail::kEvalNoise) {
  SweepResult out;
  out.objectives.assign(static_cast<std::size_t>(n_paths), 0.0);
  const int n_chunks = (n_paths + chunk_size - 1) / chunk_size;
  std::vector<int> violations(static_cast<std::size_t>(n_chunks), 0);
  std::exception_ptr error;

#pragma omp parallel for schedule(dynamic) num_threads(threads)
  for (int ci = 0; ci < n_chunks; ++ci) {
    try {
      const int first = ci * chunk_size;
      const int count = std::min(chunk_size, n_paths - first);
      const auto seg_seeds =
          detail::sample_seeds(seed, seg_tag, static_cast<std::uint64_t>(first), count);
      const auto noise_seeds =
          detail::sample_seeds(seed, noise_tag, static_cast<std::uint64_t>(first), count);
      Segment segment = sample_initial_segment(segspec, grid, seg_seeds);
      BrownianBatch noise = BrownianBatch::sample(grid, model.noise_dim, noise_seeds);
      Tape tape;
      RolloutResult res = rollout(model, policy, tape, segment, noise, grid, false);
      const Mat& obj = res.objective.value();
      for (int i = 0; i < count; ++i) out.objectives[static_cast<std::size_t>(first + i)] = obj(i, 0);
      violations[static_cast<std::size_t>(ci)] = detail::count_violations(res.path);
    } catch (...) {
#pragma omp critical
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
  for (int v : violations) out.violations += v;
  return out;
}

inline EvalReport evaluate(const DynamicsModel& model, const Policy& policy, const TimeGrid& grid,
                           const InitialSegmentSpec& segspec, int n_paths, std::uint64_t seed,
                           int chunk_size = 32, int threads = 1) {
  const auto t0 = std::chrono::steady_clock::now();
  SweepResult sw = sweep(model, policy, grid, segspec, n_paths, seed, chunk_size, threads);
  EvalReport rep;
  rep.paths = n_paths;
  double sum = 0.0;
  for (double o : sw.objectives) sum += o;
  rep.mean_objective = sum / n_paths;
  if (n_paths > 1) {
    double sq = 0.0;
    for (double o : sw.objectives) sq += (o - rep.mean_objective) * (o - rep.mean_objective);
    rep.standard_error = std::sqrt(sq / (n_paths - 1)) / std::sqrt(static_cast<double>(n_paths));
  }
  rep.violation_rate = static_cast<double>(sw.violations) / n_paths;
  rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct TrainRecord {
  int step = 0;
  double wall_seconds = 0.0;
  double val_objective = 0.0;
  double violation_rate = 0.0;
};

struct TrainResult {
  std::vector<TrainRecord> records;
};

// One stochastic-gradient step over a fresh batch. The batch is processed in
// fixed-size chunks; per-chunk gradients are reduced in chunk order so the
// result does not depend on the number of threads.
inline void train_step(const DynamicsModel& model, Policy& policy, const TimeGrid& grid,
                       const InitialSegmentSpec& segspec, const TrainConfig& cfg, int step,
                       AdamState& adam) {
  const int batch = cfg.batch_size;
  const int n_chunks = (batch + cfg.chunk_size - 1) / cfg.chunk_size;
  std::vector<std::vector<Mat>> chunk_grads(static_cast<std::size_t>(n_chunks));
  std::exception_ptr error;

#pragma omp parallel for schedule(dynamic) num_threads(cfg.threads)
  for (int ci = 0; ci < n_chunks; ++ci) {
    try {
      const int first = ci * cfg.chunk_size;
      const int count = std::min(cfg.chunk_size, batch - first);
      const std::uint64_t gid =
          static_cast<std::uint64_t>(step) * static_cast<std::uint64_t>(batch) +
          static_cast<std::uint64_t>(first);
      const auto seg_seeds = detail::sample_seeds(cfg.seed, detail::kTrainSegment, gid, count);
      const auto noise_seeds = detail::sample_seeds(cfg.seed, detail::kTrainNoise, gid, count);
      Segment segment = sample_initial_segment(segspec, grid, seg_seeds);
      BrownianBatch noise = BrownianBatch::sample(grid, model.noise_dim, noise_seeds);

      Tape tape;
      auto ctx = policy.bind(tape, true);
      RolloutResult res = rollout(model, *ctx, tape, segment, noise, grid);
      Var loss = assemble_loss(model, res, cfg.penalty_coeff, /*mean_reduce=*/false);
      tape.backward(loss);
      std::vector<Mat> grads;
      grads.reserve(policy.parameters().size());
      for (const Var& pv : ctx->bound_params()) grads.push_back(pv.grad());
      chunk_grads[static_cast<std::size_t>(ci)] = std::move(grads);
    } catch (...) {
#pragma omp critical
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);

  std::vector<Mat> total;
  total.reserve(policy.parameters().size());
  for (const auto& p : policy.parameters()) total.push_back(Mat::Zero(p.value.rows(), p.value.cols()));
  for (int ci = 0; ci < n_chunks; ++ci) {
    const auto& cg = chunk_grads[static_cast<std::size_t>(ci)];
    for (std::size_t i = 0; i < total.size(); ++i) total[i] += cg[i];
  }
  for (Mat& g : total) g /= static_cast<double>(batch);

  if (cfg.grad_clip > 0.0) {
    double sq = 0.0;
    for (const Mat& g : total) sq += g.squaredNorm();
    const double norm = std::sqrt(sq);
    if (norm > cfg.grad_clip) {
      const double s = cfg.grad_clip / norm;
      for (Mat& g : total) g *= s;
    }
  }
  adam_step(policy.parameters(), total, adam, cfg.schedule.rate_at(step));
}

inline TrainRecord validate_policy(const DynamicsModel& model, const Policy& policy,
                                   const TimeGrid& grid, const InitialSegmentSpec& segspec,
                                   const TrainConfig& cfg, int step, double wall_seconds) {
  SweepResult sw = sweep(model, policy, grid, segspec, cfg.validation_size, cfg.seed,
                         cfg.chunk_size, cfg.threads, detail::kValSegment, detail::kValNoise);
  double sum = 0.0;
  for (double o : sw.objectives) sum += o;
  TrainRecord rec;
  rec.step = step;
  rec.wall_seconds = wall_seconds;
  rec.val_objective = sum / cfg.validation_size;
  rec.violation_rate = static_cast<double>(sw.violations) / cfg.validation_size;
  if (!std::isfinite(rec.val_objective)) {
    throw NumericalError("validation objective diverged at step " + std::to_string(step));
  }
  return rec;
}

// Adam training with periodic validation on a frozen (segment, noise) set.
// progress, when given, is called after every validation record.
inline TrainResult train(const DynamicsModel& model, Policy& policy, const TimeGrid& grid,
                         const InitialSegmentSpec& segspec, const TrainConfig& cfg,
                         const std::function<void(const TrainRecord&)>& progress = {}) {
  cfg.validate();
  AdamState adam(policy.parameters());
  TrainResult out;
  const auto t0 = std::chrono::steady_clock::now();
  auto elapsed = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  };
  auto record = [&](int step) {
    TrainRecord rec = validate_policy(model, policy, grid, segspec, cfg, step, elapsed());
    out.records.push_back(rec);
    if (progress) progress(rec);
  };
  record(0);
  for (int step = 0; step < cfg.total_steps; ++step) {
    train_step(model, policy, grid, segspec, cfg, step, adam);
    if ((step + 1) % cfg.validation_period == 0 || step + 1 == cfg.total_steps) {
      record(step + 1);
    }
  }
  return out;
}

}  // namespace sddec
