#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "sddec/autodiff.hpp"
#include "sddec/policy.hpp"

namespace sddec {

enum class MemoryKind { None, FiniteWindow, InfiniteTruncated };

// Observables available to drift/volatility/cost at one step.
struct Observables {
  Var x;                  // X(t_k), B x n
  std::optional<Var> y;   // distributed delay Y(t_k)
  std::optional<Var> z;   // discrete delay Z(t_k)
  double t = 0.0;
};

// One benchmark problem: coefficients as closures over tape Vars plus the
// metadata the rollout/training layers need.
struct DynamicsModel {
  std::string name;
  int state_dim = 1;
  int control_dim = 1;
  int noise_dim = 1;
  bool needs_y = false;
  bool needs_z = false;
  MemoryKind memory = MemoryKind::FiniteWindow;
  double lambda = 0.0;
  Eigen::VectorXd pre_history_constant;  // infinite-memory tail value

  double sign = +1.0;  // +1 minimize, -1 maximize
  std::vector<bool> control_clamp;
  double penalty_coeff = 0.0;
  bool positivity_constrained = false;

  std::function<Var(Tape&, const Observables&, const Var& control)> drift;
  // Returns sigma(t, X_t, pi) dW as a B x n Var; dW enters as a constant.
  std::function<Var(Tape&, const Observables&, const Var& control, const Mat& dW)> diffusion;
  std::function<Var(Tape&, const Observables&, const Var& control)> running_cost;  // B x 1
  std::function<Var(Tape&, const Observables&)> terminal_cost;                     // B x 1
};

// ---------------------------------------------------------------------------
// Linear-quadratic problem
// ---------------------------------------------------------------------------

struct LqSpec {
  int n = 10;
  int m = 10;
  int l = 10;
  double lambda = 0.1;
  double delta = 1.0;
  Mat A1, A2, A3, B, sigma, Q, R, G;

  double a2_relation_residual() const {
    const double e = std::exp(lambda * delta);
    Mat expected = e * (lambda * Mat::Identity(n, n) + A1 + e * A3) * A3;
    return (A2 - expected).cwiseAbs().maxCoeff();
  }

  void validate() const {
    auto psd = [](const Mat& M, const char* what, double floor) {
      Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (M + M.transpose()));
      if (es.eigenvalues().minCoeff() < floor) {
        throw std::invalid_argument(std::string("LqSpec: ") + what + " fails definiteness check");
      }
    };
    psd(Q, "Q", -1e-12);
    psd(G, "G", -1e-12);
    psd(R, "R", 1e-12);
    if (A3.cwiseAbs().maxCoeff() == 0.0) throw std::invalid_argument("LqSpec: A3 = 0");
    if (a2_relation_residual() > 1e-12) {
      throw std::invalid_argument("LqSpec: A2 does not satisfy the prescribed relation");
    }
  }
};

// Random constant coefficients: A1, A3, B, sigma entries i.i.d. uniform on
// [-range, range]; Q, R, G proportional to the identity; A2 from the relation
// A2 = e^{lambda delta}(lambda I + A1 + e^{lambda delta} A3) A3.
inline LqSpec lq_generate_spec(std::uint64_t seed, int n = 10, int m = 10, int l = 10,
                               double lambda = 0.1, double delta = 1.0, double range = 0.2,
                               double q = 1.0, double r = 1.0, double g = 1.0) {
  std::mt19937_64 rng(seed);
  auto draw = [&](int rows, int cols) {
    Mat M(rows, cols);
    for (int i = 0; i < rows; ++i) {
      for (int j = 0; j < cols; ++j) M(i, j) = range * (2.0 * detail::uniform01(rng) - 1.0);
    }
    return M;
  };
  LqSpec s;
  s.n = n;
  s.m = m;
  s.l = l;
  s.lambda = lambda;
  s.delta = delta;
  s.A1 = draw(n, n);
  do {
    s.A3 = draw(n, n);
  } while (s.A3.cwiseAbs().maxCoeff() == 0.0);
  s.B = draw(n, m);
  s.sigma = draw(n, l);
  s.Q = q * Mat::Identity(n, n);
  s.R = r * Mat::Identity(m, m);
  s.G = g * Mat::Identity(n, n);
  const double e = std::exp(lambda * delta);
  s.A2 = e * (lambda * Mat::Identity(n, n) + s.A1 + e * s.A3) * s.A3;
  s.validate();
  return s;
}

// w = X + e^{lambda delta} A3 Y, the composite state the LQ cost penalizes.
inline Var lq_composite(const LqSpec& spec, const Observables& obs) {
  const double e = std::exp(spec.lambda * spec.delta);
  return ad::add(obs.x, ad::matmul_const(*obs.y, Mat(e * spec.A3)));
}

inline Var quad_form_rows(const Var& v, const Mat& M) {
  return ad::rowsum(ad::mul(v, ad::matmul_const(v, M)));
}

inline DynamicsModel lq_dynamics(const LqSpec& spec) {
  spec.validate();
  DynamicsModel m;
  m.name = "lq";
  m.state_dim = spec.n;
  m.control_dim = spec.m;
  m.noise_dim = spec.l;
  m.needs_y = true;
  m.needs_z = true;
  m.memory = MemoryKind::FiniteWindow;
  m.lambda = spec.lambda;
  m.sign = +1.0;
  m.penalty_coeff = 0.0;
  m.drift = [spec](Tape&, const Observables& obs, const Var& pi) {
    Var d = ad::matmul_const(obs.x, spec.A1);
    d = ad::add(d, ad::matmul_const(*obs.y, spec.A2));
    d = ad::add(d, ad::matmul_const(*obs.z, spec.A3));
    return ad::add(d, ad::matmul_const(pi, spec.B));
  };
  m.diffusion = [spec](Tape& tape, const Observables&, const Var&, const Mat& dW) {
    return tape.leaf(dW * spec.sigma.transpose(), false);
  };
  m.running_cost = [spec](Tape&, const Observables& obs, const Var& pi) {
    Var w = lq_composite(spec, obs);
    return ad::add(quad_form_rows(w, spec.Q), quad_form_rows(pi, spec.R));
  };
  m.terminal_cost = [spec](Tape&, const Observables& obs) {
    return quad_form_rows(lq_composite(spec, obs), spec.G);
  };
  return m;
}

// ---------------------------------------------------------------------------
// Optimal consumption with fixed finite delay (scalar problem)
// ---------------------------------------------------------------------------

struct ConsumptionSpec {
  double lambda = 0.1;
  double beta = 0.1;
  double a = 0.2;
  double gamma = 0.7;
  double mu_t = 0.1;
  double sigma_t = 0.5;
  double delta = 0.8;

  void validate() const {
    if (a <= 0.0) throw std::invalid_argument("ConsumptionSpec: a must be positive");
    if (gamma <= 0.0 || gamma >= 1.0) {
      throw std::invalid_argument("ConsumptionSpec: gamma must lie in (0, 1)");
    }
  }

  double weight() const { return a * std::exp(lambda * delta); }  // a e^{lambda delta}
};

// wealth composite T(x, y) = x + a e^{lambda delta} y
inline Var consumption_composite(const ConsumptionSpec& spec, const Observables& obs) {
  return ad::add(obs.x, ad::scale(*obs.y, spec.weight()));
}

inline DynamicsModel consumption_dynamics(const ConsumptionSpec& spec) {
  spec.validate();
  DynamicsModel m;
  m.name = "consumption";
  m.state_dim = 1;
  m.control_dim = 1;
  m.noise_dim = 1;
  m.needs_y = true;
  m.needs_z = true;
  m.memory = MemoryKind::FiniteWindow;
  m.lambda = spec.lambda;
  m.sign = -1.0;  // utility maximization
  m.control_clamp = {true};
  m.positivity_constrained = true;
  const double ae = spec.weight();
  m.drift = [spec, ae](Tape&, const Observables& obs, const Var& c) {
    Var mu = ad::add(ad::scale(*obs.y, ae * (ae + spec.lambda)),
                     ad::scale(consumption_composite(spec, obs), spec.mu_t));
    return ad::sub(ad::add(mu, ad::scale(*obs.z, spec.a)), c);
  };
  m.diffusion = [spec](Tape& tape, const Observables& obs, const Var&, const Mat& dW) {
    Var vol = ad::scale(consumption_composite(spec, obs), spec.sigma_t);
    return ad::mul(vol, tape.leaf(dW, false));
  };
  m.running_cost = [spec](Tape&, const Observables& obs, const Var& c) {
    return ad::scale(ad::pow_utility(c, spec.gamma), std::exp(-spec.beta * obs.t));
  };
  m.terminal_cost = [spec](Tape&, const Observables& obs) {
    return ad::pow_utility(consumption_composite(spec, obs), spec.gamma);
  };
  return m;
}

// ---------------------------------------------------------------------------
// Portfolio optimization with complete memory (scalar, infinite delay)
// ---------------------------------------------------------------------------

struct PortfolioSpec {
  double lambda = 0.3;
  double beta = 0.2;
  double mu1 = 0.1;
  double mu2 = 0.2;
  double r = 0.05;
  double sigma = 0.4;

  double eta() const {
    const double disc = (r + lambda) * (r + lambda) + 4.0 * mu2;
    if (disc < 0.0) throw std::invalid_argument("PortfolioSpec: negative discriminant");
    return 0.5 * (std::sqrt(disc) - (r + lambda));
  }

  double lambda2() const {
    return 0.5 * (mu1 - r) * (mu1 - r) / (beta * sigma * sigma) + std::log(beta) - 1.0 +
           (r + eta()) / beta;
  }

  void validate() const {
    if (eta() <= 0.0) throw std::invalid_argument("PortfolioSpec: eta must be positive");
    if (sigma <= 0.0 || beta <= 0.0) throw std::invalid_argument("PortfolioSpec: need sigma, beta > 0");
  }
};

// Controls are (pi, c) as columns 0, 1; c is the consumed fraction of wealth.
inline DynamicsModel portfolio_dynamics(const PortfolioSpec& spec, double horizon,
                                        const Eigen::VectorXd& pre_history_constant,
                                        double penalty_coeff = 10.0) {
  spec.validate();
  DynamicsModel m;
  m.name = "portfolio";
  m.state_dim = 1;
  m.control_dim = 2;
  m.noise_dim = 1;
  m.needs_y = true;
  m.needs_z = false;
  m.memory = MemoryKind::InfiniteTruncated;
  m.lambda = spec.lambda;
  m.pre_history_constant = pre_history_constant;
  m.sign = -1.0;
  m.control_clamp = {false, true};
  m.penalty_coeff = penalty_coeff;
  m.positivity_constrained = true;
  const double eta = spec.eta();
  m.drift = [spec](Tape&, const Observables& obs, const Var& ctrl) {
    Var pi = ad::slice_cols(ctrl, 0, 1);
    Var c = ad::slice_cols(ctrl, 1, 1);
    Var rate = ad::add_const(ad::sub(ad::scale(pi, spec.mu1 - spec.r), c), spec.r);
    return ad::add(ad::mul(rate, obs.x), ad::scale(*obs.y, spec.mu2));
  };
  m.diffusion = [spec](Tape& tape, const Observables& obs, const Var& ctrl, const Mat& dW) {
    Var pi = ad::slice_cols(ctrl, 0, 1);
    return ad::mul(ad::scale(ad::mul(pi, obs.x), spec.sigma), tape.leaf(dW, false));
  };
  m.running_cost = [spec](Tape&, const Observables& obs, const Var& ctrl) {
    Var c = ad::slice_cols(ctrl, 1, 1);
    Var consumed = ad::mul(c, obs.x);
    return ad::scale(ad::log_floored(consumed, 1e-12), std::exp(-spec.beta * obs.t));
  };
  m.terminal_cost = [spec, eta, horizon](Tape&, const Observables& obs) {
    Var w = ad::add(obs.x, ad::scale(*obs.y, eta));
    return ad::scale(ad::log_floored(w, 1e-12), std::exp(-spec.beta * horizon) / spec.beta);
  };
  return m;
}

}  // namespace sddec
