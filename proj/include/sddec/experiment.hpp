#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sddec/analytic.hpp"
#include "sddec/checkpoint.hpp"
#include "sddec/config.hpp"
#include "sddec/models.hpp"
#include "sddec/rollout.hpp"
#include "sddec/train.hpp"

namespace sddec {

namespace detail {
// seed sub-streams on top of the train/eval tags in train.hpp
enum ExperimentSeedTag : std::uint64_t {
  kRepeat = 101,
  kPolicyInit = 102,
};
}  // namespace detail

struct ProblemSetup {
  DynamicsModel model;
  TimeGrid grid;
  InitialSegmentSpec segspec;
  AnalyticalSolution analytic;
};

inline ProblemSetup build_problem(const ExperimentConfig& c) {
  c.validate();
  ProblemSetup s;
  s.grid = c.grid();
  if (c.problem == "lq") {
    LqSpec spec = lq_generate_spec(c.lq_seed, c.lq_n, c.lq_m, c.lq_l, c.lq_lambda, c.delay,
                                   c.lq_range, c.lq_q, c.lq_r, c.lq_g);
    s.model = lq_dynamics(spec);
    s.analytic = lq_optimal(spec, s.grid);
    s.segspec = InitialSegmentSpec::constant(
        Eigen::VectorXd::Constant(c.lq_n, c.segment_base), c.segment_noise_std,
        c.segment_floor >= 0.0 ? std::optional<double>(c.segment_floor) : std::nullopt);
  } else if (c.problem == "consumption") {
    ConsumptionSpec spec = c.consumption;
    spec.delta = c.delay;
    s.model = consumption_dynamics(spec);
    s.analytic = consumption_optimal(spec, s.grid);
    s.segspec = InitialSegmentSpec::constant(
        Eigen::VectorXd::Constant(1, c.segment_base), c.segment_noise_std,
        c.segment_floor >= 0.0 ? std::optional<double>(c.segment_floor) : std::nullopt);
  } else {
    const Eigen::VectorXd pre = Eigen::VectorXd::Constant(1, c.segment_base);
    s.model = portfolio_dynamics(c.portfolio, c.horizon, pre, c.train.penalty_coeff);
    s.analytic = portfolio_optimal(c.portfolio, s.grid, pre);
    s.segspec = InitialSegmentSpec::constant(
        pre, c.segment_noise_std,
        c.segment_floor >= 0.0 ? std::optional<double>(c.segment_floor) : std::nullopt,
        /*constant_tail=*/true);
  }
  return s;
}

inline std::shared_ptr<Policy> build_trainable_policy(const ExperimentConfig& c,
                                                      std::uint64_t init_seed) {
  if (c.policy == "feedforward") {
    auto p = std::make_shared<FeedforwardPolicy>(c.state_dim(), c.ff_lag_steps, c.ff_hidden,
                                                 c.control_dim(), c.clamp_mask());
    p->init_parameters(init_seed);
    return p;
  }
  if (c.policy == "lstm") {
    auto p = std::make_shared<LstmPolicy>(c.state_dim(), c.lstm_hidden, c.control_dim(),
                                          c.clamp_mask());
    p->init_parameters(init_seed);
    return p;
  }
  throw ConfigError("experiment.policy: '" + c.policy + "' is not trainable");
}

// Closed-form V0 averaged over the same frozen evaluation segments the test
// sweep uses (common random numbers against the learned policy's test mean).
struct ValueStats {
  double mean = 0.0;
  double stddev = 0.0;
};

inline ValueStats analytical_value_over_eval_segments(const ProblemSetup& s, std::uint64_t seed,
                                                      int n_paths) {
  const auto seeds = detail::sample_seeds(seed, detail::kEvalSegment, 0, n_paths);
  Segment seg = sample_initial_segment(s.segspec, s.grid, seeds);
  Eigen::VectorXd v = s.analytic.value(seg);
  ValueStats st;
  st.mean = v.mean();
  st.stddev = n_paths > 1 ? std::sqrt((v.array() - st.mean).square().sum() / (n_paths - 1)) : 0.0;
  return st;
}

struct RepeatResult {
  std::uint64_t seed = 0;
  EvalReport test;
  double train_wall_seconds = 0.0;
  int steps = 0;
};

struct RunSummary {
  ExperimentConfig config;
  std::size_t parameter_count = 0;
  std::vector<RepeatResult> repeats;
  ValueStats analytical_v0;
  double mean_objective = 0.0;      // across repeats
  double objective_spread = 0.0;    // std across repeats (0 for one repeat)
  double relative_gap = 0.0;        // (objective - V0) / |V0|, problem-native sign
  double mean_violation_rate = 0.0;
};

inline nlohmann::ordered_json summary_to_json(const RunSummary& s) {
  nlohmann::ordered_json j;
  j["problem"] = s.config.problem;
  j["policy"] = s.config.policy;
  j["seed"] = s.config.seed;
  j["parameter_count"] = s.parameter_count;
  j["steps"] = s.config.policy == "analytical" ? 0 : s.config.train.total_steps;
  j["test_paths"] = s.config.train.test_size;
  j["analytical_v0_mean"] = s.analytical_v0.mean;
  j["analytical_v0_std"] = s.analytical_v0.stddev;
  j["objective_mean"] = s.mean_objective;
  j["objective_spread"] = s.objective_spread;
  j["relative_gap"] = s.relative_gap;
  j["violation_rate"] = s.mean_violation_rate;
  j["repeats"] = nlohmann::ordered_json::array();
  for (const auto& r : s.repeats) {
    nlohmann::ordered_json jr;
    jr["seed"] = r.seed;
    jr["objective"] = r.test.mean_objective;
    jr["standard_error"] = r.test.standard_error ? nlohmann::ordered_json(*r.test.standard_error)
                                                 : nlohmann::ordered_json(nullptr);
    jr["violation_rate"] = r.test.violation_rate;
    jr["wall_seconds"] = r.train_wall_seconds;
    j["repeats"].push_back(jr);
  }
  return j;
}

namespace detail {

inline std::string run_stem(const ExperimentConfig& c) {
  return c.problem + "_" + c.policy;
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
}

inline std::string csv_num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// Trajectories and controls of two policies under common (segment, noise):
// the data behind the path-comparison figures. Scalar problems show 3 paths;
// the LQ problem shows the first 5 coordinates of one path.
inline void write_sample_paths(const std::string& path, const ProblemSetup& s,
                               const Policy& learned, const Policy& reference,
                               std::uint64_t seed) {
  const bool scalar = s.model.state_dim == 1;
  const int n_paths = scalar ? 3 : 1;
  const int n_coords = scalar ? 1 : std::min(5, s.model.state_dim);
  const int n_controls = scalar ? s.model.control_dim : std::min(5, s.model.control_dim);
  const auto seg_seeds = sample_seeds(seed, kEvalSegment, 0, n_paths);
  const auto noise_seeds = sample_seeds(seed, kEvalNoise, 0, n_paths);
  Segment seg = sample_initial_segment(s.segspec, s.grid, seg_seeds);
  BrownianBatch noise = BrownianBatch::sample(s.grid, s.model.noise_dim, noise_seeds);
  Tape t1, t2;
  RolloutResult a = rollout(s.model, learned, t1, seg, noise, s.grid, false);
  RolloutResult b = rollout(s.model, reference, t2, seg, noise, s.grid, false);

  std::ostringstream out;
  out << "t";
  for (int p = 0; p < n_paths; ++p) {
    for (int d = 0; d < n_coords; ++d) {
      out << ",x" << d << "_p" << p << "_learned,x" << d << "_p" << p << "_reference";
    }
    for (int u = 0; u < n_controls; ++u) {
      out << ",u" << u << "_p" << p << "_learned,u" << u << "_p" << p << "_reference";
    }
  }
  out << "\n";
  for (int k = 0; k <= s.grid.n_forward; ++k) {
    out << csv_num(s.grid.time(k));
    const Mat& xa = a.path.node(k).value();
    const Mat& xb = b.path.node(k).value();
    const bool has_ctrl = k < s.grid.n_forward;
    for (int p = 0; p < n_paths; ++p) {
      for (int d = 0; d < n_coords; ++d) {
        out << "," << csv_num(xa(p, d)) << "," << csv_num(xb(p, d));
      }
      for (int u = 0; u < n_controls; ++u) {
        if (has_ctrl) {
          out << "," << csv_num(a.controls[static_cast<std::size_t>(k)].value()(p, u)) << ","
              << csv_num(b.controls[static_cast<std::size_t>(k)].value()(p, u));
        } else {
          out << ",,";  // no control at the terminal node
        }
      }
    }
    out << "\n";
  }
  write_text(path, out.str());
}

}  // namespace detail

// Trains (or, for policy = analytical, only evaluates), writing per-repeat
// training CSVs, checkpoints, a common-noise sample-path CSV, and the summary
// JSON. Returns the summary.
inline RunSummary run_train(const ExperimentConfig& c, int repeat = 1) {
  if (repeat < 1) throw ConfigError("repeat: must be >= 1");
  ProblemSetup setup = build_problem(c);
  std::filesystem::create_directories(c.out_dir);
  const std::string stem = c.out_dir + "/" + detail::run_stem(c);

  RunSummary summary;
  summary.config = c;
  summary.analytical_v0 =
      analytical_value_over_eval_segments(setup, c.seed, c.train.test_size);

  if (c.policy == "analytical") {
    RepeatResult rr;
    rr.seed = c.seed;
    rr.test = evaluate(setup.model, *setup.analytic.policy, setup.grid, setup.segspec,
                       c.train.test_size, c.seed, c.train.chunk_size, c.train.threads);
    summary.repeats.push_back(rr);
    summary.parameter_count = 0;
    detail::write_sample_paths(stem + "_paths.csv", setup, *setup.analytic.policy,
                               *setup.analytic.policy, c.seed);
  } else {
    for (int rep = 0; rep < repeat; ++rep) {
      const std::uint64_t run_seed =
          repeat == 1 ? c.seed : derive_seed(c.seed, detail::kRepeat, static_cast<std::uint64_t>(rep));
      auto policy = build_trainable_policy(c, derive_seed(run_seed, detail::kPolicyInit, 0));
      summary.parameter_count = policy->parameter_count();

      TrainConfig tc = c.train;
      tc.seed = run_seed;
      const std::string log_path = stem + "_r" + std::to_string(rep) + "_train.csv";
      std::ofstream log(log_path);
      if (!log) throw std::runtime_error("cannot write " + log_path);
      log << "step,wall_seconds,val_objective,violation_rate\n";
      TrainResult tr = train(setup.model, *policy, setup.grid, setup.segspec, tc,
                             [&](const TrainRecord& rec) {
                               log << rec.step << "," << detail::csv_num(rec.wall_seconds) << ","
                                   << detail::csv_num(rec.val_objective) << ","
                                   << detail::csv_num(rec.violation_rate) << "\n";
                               log.flush();
                             });

      RepeatResult rr;
      rr.seed = run_seed;
      rr.steps = tc.total_steps;
      rr.train_wall_seconds = tr.records.empty() ? 0.0 : tr.records.back().wall_seconds;
      rr.test = evaluate(setup.model, *policy, setup.grid, setup.segspec, tc.test_size, c.seed,
                         tc.chunk_size, tc.threads);
      summary.repeats.push_back(rr);

      save_checkpoint(policy->parameters(), stem + "_r" + std::to_string(rep) + "_params.txt");
      if (rep == 0) {
        detail::write_sample_paths(stem + "_paths.csv", setup, *policy, *setup.analytic.policy,
                                   c.seed);
      }
    }
  }

  double sum = 0.0, viol = 0.0;
  for (const auto& r : summary.repeats) {
    sum += r.test.mean_objective;
    viol += r.test.violation_rate;
  }
  const auto n = static_cast<double>(summary.repeats.size());
  summary.mean_objective = sum / n;
  summary.mean_violation_rate = viol / n;
  if (summary.repeats.size() > 1) {
    double sq = 0.0;
    for (const auto& r : summary.repeats) {
      sq += (r.test.mean_objective - summary.mean_objective) *
            (r.test.mean_objective - summary.mean_objective);
    }
    summary.objective_spread = std::sqrt(sq / (n - 1.0));
  }
  summary.relative_gap = (summary.mean_objective - summary.analytical_v0.mean) /
                         std::abs(summary.analytical_v0.mean);

  detail::write_text(stem + "_summary.json", summary_to_json(summary).dump(2) + "\n");
  detail::write_text(stem + "_config.txt", serialize_config(c));
  return summary;
}

inline RunSummary run_evaluate(const ExperimentConfig& c, const std::string& checkpoint_path = "") {
  ProblemSetup setup = build_problem(c);
  std::filesystem::create_directories(c.out_dir);
  const std::string stem = c.out_dir + "/" + detail::run_stem(c) + "_eval";

  std::shared_ptr<Policy> policy;
  std::size_t param_count = 0;
  if (c.policy == "analytical") {
    policy = setup.analytic.policy;
  } else {
    if (checkpoint_path.empty()) {
      throw ConfigError("evaluate: trainable policy needs a checkpoint path");
    }
    auto trained = build_trainable_policy(c, 0);
    restore_parameters(*trained, load_checkpoint(checkpoint_path));
    param_count = trained->parameter_count();
    policy = trained;
  }

  RunSummary summary;
  summary.config = c;
  summary.parameter_count = param_count;
  summary.analytical_v0 =
      analytical_value_over_eval_segments(setup, c.seed, c.train.test_size);
  RepeatResult rr;
  rr.seed = c.seed;
  rr.test = evaluate(setup.model, *policy, setup.grid, setup.segspec, c.train.test_size, c.seed,
                     c.train.chunk_size, c.train.threads);
  summary.repeats.push_back(rr);
  summary.mean_objective = rr.test.mean_objective;
  summary.mean_violation_rate = rr.test.violation_rate;
  summary.relative_gap = (summary.mean_objective - summary.analytical_v0.mean) /
                         std::abs(summary.analytical_v0.mean);
  detail::write_text(stem + "_summary.json", summary_to_json(summary).dump(2) + "\n");
  return summary;
}

// ---------------------------------------------------------------------------
// Lag-window ablation (feedforward, LQ)
// ---------------------------------------------------------------------------

struct AblationResult {
  std::vector<double> lags;
  std::vector<double> costs;
  double spearman_rho = 0.0;
};

namespace detail {

inline std::vector<double> ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0u);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t pos = 0; pos < idx.size();) {
    std::size_t end = pos;
    while (end + 1 < idx.size() && v[idx[end + 1]] == v[idx[pos]]) ++end;
    const double mid = 0.5 * (static_cast<double>(pos) + static_cast<double>(end)) + 1.0;
    for (std::size_t i = pos; i <= end; ++i) r[idx[i]] = mid;
    pos = end + 1;
  }
  return r;
}

}  // namespace detail

inline double spearman_rho(const std::vector<double>& x, const std::vector<double>& y) {
  const auto rx = detail::ranks(x), ry = detail::ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double cov = 0.0, vx = 0.0, vy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    cov += (rx[i] - mx) * (ry[i] - my);
    vx += (rx[i] - mx) * (rx[i] - mx);
    vy += (ry[i] - my) * (ry[i] - my);
  }
  return cov / std::sqrt(vx * vy);
}

// One feedforward training run per processed lag time; emits (lag, final test
// cost) sorted by lag plus the rank-correlation trend statistic.
inline AblationResult run_ablation_lag(const ExperimentConfig& base,
                                       const std::vector<double>& lag_times) {
  if (base.problem != "lq" || base.policy != "feedforward") {
    throw ConfigError("ablate-lag: requires problem = lq, policy = feedforward");
  }
  if (lag_times.empty()) throw ConfigError("ablate-lag: empty lag list");
  ProblemSetup probe = build_problem(base);
  AblationResult out;
  std::vector<double> sorted = lag_times;
  std::sort(sorted.begin(), sorted.end());
  for (double lag : sorted) {
    const double ratio = lag / probe.grid.h;
    const int steps = static_cast<int>(std::lround(ratio));
    if (std::abs(ratio - steps) > 1e-9 * (1.0 + std::abs(ratio)) || steps < 0 ||
        steps > probe.grid.n_history) {
      throw ConfigError("ablate-lag: lag " + std::to_string(lag) +
                        " is not a history-grid multiple");
    }
    ExperimentConfig c = base;
    c.ff_lag_steps = steps;
    ProblemSetup setup = build_problem(c);
    auto policy = build_trainable_policy(c, derive_seed(c.seed, detail::kPolicyInit, 0));
    TrainConfig tc = c.train;
    tc.seed = c.seed;
    train(setup.model, *policy, setup.grid, setup.segspec, tc);
    EvalReport rep = evaluate(setup.model, *policy, setup.grid, setup.segspec, tc.test_size,
                              c.seed, tc.chunk_size, tc.threads);
    out.lags.push_back(lag);
    out.costs.push_back(rep.mean_objective);
  }
  out.spearman_rho = out.lags.size() > 1 ? spearman_rho(out.lags, out.costs) : 0.0;

  std::filesystem::create_directories(base.out_dir);
  std::ostringstream csv;
  csv << "lag,final_cost\n";
  for (std::size_t i = 0; i < out.lags.size(); ++i) {
    csv << detail::csv_num(out.lags[i]) << "," << detail::csv_num(out.costs[i]) << "\n";
  }
  detail::write_text(base.out_dir + "/lq_feedforward_lag_ablation.csv", csv.str());
  nlohmann::ordered_json j;
  j["spearman_rho"] = out.spearman_rho;
  j["lags"] = out.lags;
  j["final_costs"] = out.costs;
  detail::write_text(base.out_dir + "/lq_feedforward_lag_ablation.json", j.dump(2) + "\n");
  return out;
}

}  // namespace sddec
