#pragma once

#include <cctype>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "sddec/models.hpp"
#include "sddec/train.hpp"

namespace sddec {

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Flat key-value experiment description, sectioned per module. Empty text is a
// valid config (all defaults for the chosen problem); unknown keys are errors.
struct ExperimentConfig {
  // [experiment]
  std::string problem = "lq";          // lq | consumption | portfolio
  std::string policy = "lstm";         // lstm | feedforward | analytical
  std::uint64_t seed = 0;
  std::string out_dir = "out";

  // [grid]
  double horizon = 1.0;
  int steps = 40;       // N_T
  double delay = 1.0;   // delta; truncation window for the portfolio problem

  // [lq]
  std::uint64_t lq_seed = 1;
  int lq_n = 10, lq_m = 10, lq_l = 10;
  double lq_lambda = 0.1, lq_range = 0.2, lq_q = 1.0, lq_r = 1.0, lq_g = 1.0;

  // [consumption] / [portfolio]
  ConsumptionSpec consumption;
  PortfolioSpec portfolio;

  // [policy]
  std::vector<int> ff_hidden = {300, 300};
  int ff_lag_steps = 40;   // N_delta_bar
  int lstm_hidden = 200;   // d_h

  // [segment]
  double segment_base = 0.5;
  double segment_noise_std = 0.05;
  double segment_floor = -1.0;  // < 0 disables the floor

  // [train]
  TrainConfig train;

  int state_dim() const { return problem == "lq" ? lq_n : 1; }
  int control_dim() const {
    if (problem == "lq") return lq_m;
    return problem == "portfolio" ? 2 : 1;
  }

  TimeGrid grid() const { return TimeGrid::from_horizon(horizon, steps, delay); }

  std::vector<bool> clamp_mask() const {
    if (problem == "consumption") return {true};
    if (problem == "portfolio") return {false, true};
    return {};
  }

  void validate() const {
    if (problem != "lq" && problem != "consumption" && problem != "portfolio") {
      throw ConfigError("experiment.problem: unknown problem '" + problem + "'");
    }
    if (policy != "lstm" && policy != "feedforward" && policy != "analytical") {
      throw ConfigError("experiment.policy: unknown policy '" + policy + "'");
    }
    TimeGrid g;
    try {
      g = grid();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("grid: ") + e.what());
    }
    if (policy == "feedforward" && ff_lag_steps > g.n_history) {
      throw ConfigError("policy.ff_lag_steps: lag window " + std::to_string(ff_lag_steps) +
                        " exceeds available history N_delta = " + std::to_string(g.n_history));
    }
    if (policy == "lstm" && lstm_hidden < state_dim()) {
      throw ConfigError("policy.lstm_hidden: d_h = " + std::to_string(lstm_hidden) +
                        " < state dim n = " + std::to_string(state_dim()) +
                        " (initial state embeds the segment start)");
    }
    if (problem == "consumption") consumption.validate();
    if (problem == "portfolio") portfolio.validate();
    try {
      train.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("train: ") + e.what());
    }
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

inline double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (...) {
    throw ConfigError(key + ": not a number: '" + v + "'");
  }
}

inline long long parse_int(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const long long i = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return i;
  } catch (...) {
    throw ConfigError(key + ": not an integer: '" + v + "'");
  }
}

inline std::vector<int> parse_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    tok = trim(tok);
    if (!tok.empty()) out.push_back(static_cast<int>(parse_int(key, tok)));
  }
  if (out.empty()) throw ConfigError(key + ": empty list");
  return out;
}

// "0:0.005,8000:0.0005" -> piecewise-constant schedule
inline LrSchedule parse_schedule(const std::string& key, const std::string& v) {
  LrSchedule s;
  std::stringstream ss(v);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    tok = trim(tok);
    const auto colon = tok.find(':');
    if (colon == std::string::npos) throw ConfigError(key + ": expected step:rate, got '" + tok + "'");
    s.points.emplace_back(static_cast<int>(parse_int(key, trim(tok.substr(0, colon)))),
                          parse_double(key, trim(tok.substr(colon + 1))));
  }
  try {
    s.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(key + ": " + e.what());
  }
  return s;
}

inline std::string format_schedule(const LrSchedule& s) {
  std::string out;
  for (std::size_t i = 0; i < s.points.size(); ++i) {
    if (i) out += ",";
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%d:%.17g", s.points[i].first, s.points[i].second);
    out += buf;
  }
  return out;
}

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

// Per-problem defaults: grid, penalty, architectures, and schedules.
inline ExperimentConfig default_config(const std::string& problem, const std::string& policy) {
  ExperimentConfig c;
  c.problem = problem;
  c.policy = policy;
  if (problem == "lq") {
    c.horizon = 1.0;
    c.steps = 40;
    c.delay = 1.0;
    c.segment_base = 0.5;
    c.segment_noise_std = 0.05;
    c.segment_floor = -1.0;
    c.ff_hidden = {300, 300};
    c.ff_lag_steps = 40;
    c.lstm_hidden = 200;
    c.train.penalty_coeff = 0.0;
    c.train.total_steps = 16000;
    c.train.schedule = LrSchedule{{{0, 0.005}, {8000, 0.0005}}};
    c.train.validation_period = 200;
  } else if (problem == "consumption") {
    c.horizon = 2.0;
    c.steps = 60;
    c.delay = 0.8;
    c.segment_base = 1.0;
    c.segment_noise_std = 0.05;
    c.segment_floor = 0.01;
    c.ff_hidden = {54, 54};
    c.ff_lag_steps = 24;
    c.lstm_hidden = 30;
    c.train.penalty_coeff = 1e5;
    c.train.total_steps = policy == "feedforward" ? 80000 : 60000;
    c.train.schedule = LrSchedule{{{0, 1e-4}}};
    c.train.validation_period = 200;
  } else if (problem == "portfolio") {
    c.horizon = 5.0;
    c.steps = 100;
    c.delay = 4.0;  // truncation window for the infinite-memory average
    c.segment_base = 1.0;
    c.segment_noise_std = 0.05;
    c.segment_floor = 0.01;
    c.ff_hidden = {96, 96};
    c.ff_lag_steps = 80;
    c.lstm_hidden = 60;
    c.train.penalty_coeff = 10.0;
    c.train.total_steps = policy == "feedforward" ? 20000 : 8000;
    c.train.schedule = LrSchedule{{{0, 5e-5}}};
    c.train.validation_period = 100;
  } else {
    throw ConfigError("experiment.problem: unknown problem '" + problem + "'");
  }
  return c;
}

// Parses "[section]\nkey = value" text. The experiment.problem / .policy keys
// choose the defaults; every other key overrides one field. Unknown keys and
// cross-field violations are reported with their key path.
inline ExperimentConfig parse_config(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::vector<std::string> order;
  std::string section;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("line " + std::to_string(lineno) + ": bad section header");
      section = detail::trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = section + "." + detail::trim(line.substr(0, eq));
    if (kv.count(key)) throw ConfigError(key + ": duplicate key");
    kv[key] = detail::trim(line.substr(eq + 1));
    order.push_back(key);
  }

  const std::string problem = kv.count("experiment.problem") ? kv["experiment.problem"] : "lq";
  const std::string policy = kv.count("experiment.policy") ? kv["experiment.policy"] : "lstm";
  if (problem != "lq" && problem != "consumption" && problem != "portfolio") {
    throw ConfigError("experiment.problem: unknown problem '" + problem + "'");
  }
  ExperimentConfig c = default_config(problem, policy);

  for (const std::string& key : order) {
    const std::string& v = kv[key];
    if (key == "experiment.problem" || key == "experiment.policy") continue;
    if (key == "experiment.seed") c.seed = static_cast<std::uint64_t>(detail::parse_int(key, v));
    else if (key == "experiment.out_dir") c.out_dir = v;
    else if (key == "grid.horizon") c.horizon = detail::parse_double(key, v);
    else if (key == "grid.steps") c.steps = static_cast<int>(detail::parse_int(key, v));
    else if (key == "grid.delay") c.delay = detail::parse_double(key, v);
    else if (key == "lq.seed") c.lq_seed = static_cast<std::uint64_t>(detail::parse_int(key, v));
    else if (key == "lq.n") c.lq_n = static_cast<int>(detail::parse_int(key, v));
    else if (key == "lq.m") c.lq_m = static_cast<int>(detail::parse_int(key, v));
    else if (key == "lq.l") c.lq_l = static_cast<int>(detail::parse_int(key, v));
    else if (key == "lq.lambda") c.lq_lambda = detail::parse_double(key, v);
    else if (key == "lq.range") c.lq_range = detail::parse_double(key, v);
    else if (key == "lq.q") c.lq_q = detail::parse_double(key, v);
    else if (key == "lq.r") c.lq_r = detail::parse_double(key, v);
    else if (key == "lq.g") c.lq_g = detail::parse_double(key, v);
    else if (key == "consumption.lambda") c.consumption.lambda = detail::parse_double(key, v);
    else if (key == "consumption.beta") c.consumption.beta = detail::parse_double(key, v);
    else if (key == "consumption.a") c.consumption.a = detail::parse_double(key, v);
    else if (key == "consumption.gamma") c.consumption.gamma = detail::parse_double(key, v);
    else if (key == "consumption.mu_t") c.consumption.mu_t = detail::parse_double(key, v);
    else if (key == "consumption.sigma_t") c.consumption.sigma_t = detail::parse_double(key, v);
    else if (key == "portfolio.lambda") c.portfolio.lambda = detail::parse_double(key, v);
    else if (key == "portfolio.beta") c.portfolio.beta = detail::parse_double(key, v);
    else if (key == "portfolio.mu1") c.portfolio.mu1 = detail::parse_double(key, v);
    else if (key == "portfolio.mu2") c.portfolio.mu2 = detail::parse_double(key, v);
    else if (key == "portfolio.r") c.portfolio.r = detail::parse_double(key, v);
    else if (key == "portfolio.sigma") c.portfolio.sigma = detail::parse_double(key, v);
    else if (key == "policy.ff_hidden") c.ff_hidden = detail::parse_int_list(key, v);
    else if (key == "policy.ff_lag_steps") c.ff_lag_steps = static_cast<int>(detail::parse_int(key, v));
    else if (key == "policy.lstm_hidden") c.lstm_hidden = static_cast<int>(detail::parse_int(key, v));
    else if (key == "segment.base") c.segment_base = detail::parse_double(key, v);
    else if (key == "segment.noise_std") c.segment_noise_std = detail::parse_double(key, v);
    else if (key == "segment.floor") c.segment_floor = detail::parse_double(key, v);
    else if (key == "train.batch_size") c.train.batch_size = static_cast<int>(detail::parse_int(key, v));
    else if (key == "train.total_steps") c.train.total_steps = static_cast<int>(detail::parse_int(key, v));
    else if (key == "train.lr") c.train.schedule = detail::parse_schedule(key, v);
    else if (key == "train.validation_period") c.train.validation_period = static_cast<int>(detail::parse_int(key, v));
    else if (key == "train.validation_size") c.train.validation_size = static_cast<int>(detail::parse_int(key, v));
    else if (key == "train.test_size") c.train.test_size = static_cast<int>(detail::parse_int(key, v));
    else if (key == "train.penalty") c.train.penalty_coeff = detail::parse_double(key, v);
    else if (key == "train.chunk_size") c.train.chunk_size = static_cast<int>(detail::parse_int(key, v));
    else if (key == "train.threads") c.train.threads = static_cast<int>(detail::parse_int(key, v));
    else if (key == "train.grad_clip") c.train.grad_clip = detail::parse_double(key, v);
    else throw ConfigError(key + ": unknown key");
  }
  c.train.seed = c.seed;
  c.validate();
  return c;
}

inline ExperimentConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

// Normalized form; parse(serialize(c)) reproduces c and serializes identically.
inline std::string serialize_config(const ExperimentConfig& c) {
  using detail::format_double;
  std::ostringstream out;
  out << "[experiment]\n";
  out << "problem = " << c.problem << "\n";
  out << "policy = " << c.policy << "\n";
  out << "seed = " << c.seed << "\n";
  out << "out_dir = " << c.out_dir << "\n\n";
  out << "[grid]\n";
  out << "horizon = " << format_double(c.horizon) << "\n";
  out << "steps = " << c.steps << "\n";
  out << "delay = " << format_double(c.delay) << "\n\n";
  if (c.problem == "lq") {
    out << "[lq]\n";
    out << "seed = " << c.lq_seed << "\n";
    out << "n = " << c.lq_n << "\n";
    out << "m = " << c.lq_m << "\n";
    out << "l = " << c.lq_l << "\n";
    out << "lambda = " << format_double(c.lq_lambda) << "\n";
    out << "range = " << format_double(c.lq_range) << "\n";
    out << "q = " << format_double(c.lq_q) << "\n";
    out << "r = " << format_double(c.lq_r) << "\n";
    out << "g = " << format_double(c.lq_g) << "\n\n";
  } else if (c.problem == "consumption") {
    out << "[consumption]\n";
    out << "lambda = " << format_double(c.consumption.lambda) << "\n";
    out << "beta = " << format_double(c.consumption.beta) << "\n";
    out << "a = " << format_double(c.consumption.a) << "\n";
    out << "gamma = " << format_double(c.consumption.gamma) << "\n";
    out << "mu_t = " << format_double(c.consumption.mu_t) << "\n";
    out << "sigma_t = " << format_double(c.consumption.sigma_t) << "\n\n";
  } else {
    out << "[portfolio]\n";
    out << "lambda = " << format_double(c.portfolio.lambda) << "\n";
    out << "beta = " << format_double(c.portfolio.beta) << "\n";
    out << "mu1 = " << format_double(c.portfolio.mu1) << "\n";
    out << "mu2 = " << format_double(c.portfolio.mu2) << "\n";
    out << "r = " << format_double(c.portfolio.r) << "\n";
    out << "sigma = " << format_double(c.portfolio.sigma) << "\n\n";
  }
  out << "[policy]\n";
  if (c.policy == "feedforward") {
    out << "ff_hidden = ";
    for (std::size_t i = 0; i < c.ff_hidden.size(); ++i) {
      if (i) out << ",";
      out << c.ff_hidden[i];
    }
    out << "\n";
    out << "ff_lag_steps = " << c.ff_lag_steps << "\n\n";
  } else if (c.policy == "lstm") {
    out << "lstm_hidden = " << c.lstm_hidden << "\n\n";
  } else {
    out << "\n";
  }
  out << "[segment]\n";
  out << "base = " << format_double(c.segment_base) << "\n";
  out << "noise_std = " << format_double(c.segment_noise_std) << "\n";
  out << "floor = " << format_double(c.segment_floor) << "\n\n";
  out << "[train]\n";
  out << "batch_size = " << c.train.batch_size << "\n";
  out << "total_steps = " << c.train.total_steps << "\n";
  out << "lr = " << detail::format_schedule(c.train.schedule) << "\n";
  out << "validation_period = " << c.train.validation_period << "\n";
  out << "validation_size = " << c.train.validation_size << "\n";
  out << "test_size = " << c.train.test_size << "\n";
  out << "penalty = " << format_double(c.train.penalty_coeff) << "\n";
  out << "chunk_size = " << c.train.chunk_size << "\n";
  out << "threads = " << c.train.threads << "\n";
  out << "grad_clip = " << format_double(c.train.grad_clip) << "\n";
  return out.str();
}

}  // namespace sddec
