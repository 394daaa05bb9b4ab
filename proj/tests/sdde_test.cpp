#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "sddec/delay.hpp"
#include "sddec/path.hpp"
#include "sddec/rollout.hpp"
#include "sddec/time_grid.hpp"
#include "test_util.hpp"

namespace sddec {
namespace {

using ad::Mat;
using ad::Tape;
using ad::Var;

std::vector<std::uint64_t> iota_seeds(std::uint64_t first, int count) {
  std::vector<std::uint64_t> s(static_cast<std::size_t>(count));
  std::iota(s.begin(), s.end(), first);
  return s;
}

// Scalar path buffer with X(t_j) = fn(t_j) on the full grid, batch 1.
PathBuffer scalar_path(Tape& tape, const TimeGrid& grid, const std::function<double(double)>& fn) {
  PathBuffer buf(grid, 1, 1);
  Segment seg;
  for (int j = -grid.n_history; j <= 0; ++j) seg.push_back(Mat::Constant(1, 1, fn(grid.time(j))));
  buf.fill_history(tape, seg);
  for (int j = 1; j <= grid.n_forward; ++j) {
    buf.append(tape.leaf(Mat::Constant(1, 1, fn(grid.time(j))), false));
  }
  return buf;
}

TEST(Grid, FromHorizon) {
  TimeGrid g = TimeGrid::from_horizon(2.0, 60, 0.8);
  EXPECT_NEAR(g.h, 1.0 / 30.0, 1e-15);
  EXPECT_EQ(g.n_forward, 60);
  EXPECT_EQ(g.n_history, 24);
  EXPECT_DOUBLE_EQ(g.time(0), 0.0);
  EXPECT_NEAR(g.time(60), 2.0, 1e-12);
  EXPECT_NEAR(g.time(-24), -0.8, 1e-12);
  EXPECT_EQ(g.node_count(), 85);
}

TEST(Grid, RejectsNonCommensurateDelay) {
  EXPECT_THROW(TimeGrid::from_horizon(1.0, 40, 0.33), std::invalid_argument);
  EXPECT_THROW(TimeGrid(0.0, 10, 10), std::invalid_argument);
}

TEST(Segment, ConstantBaseNoNoise) {
  TimeGrid g(0.1, 5, 4);
  auto spec = InitialSegmentSpec::constant(Eigen::VectorXd::Constant(2, 0.5), 0.0);
  Segment seg = sample_initial_segment(spec, g, iota_seeds(1, 3));
  ASSERT_EQ(seg.size(), 5u);
  for (const Mat& m : seg) {
    EXPECT_EQ(m.rows(), 3);
    EXPECT_EQ(m.cols(), 2);
    EXPECT_EQ(m, Mat::Constant(3, 2, 0.5));
  }
}

TEST(Segment, NoiseStdMatchesSpec) {
  TimeGrid g(0.1, 5, 2);
  auto spec = InitialSegmentSpec::constant(Eigen::VectorXd::Constant(1, 1.0), 0.05);
  const int batch = 20000;
  Segment seg = sample_initial_segment(spec, g, iota_seeds(100, batch));
  const Mat& node = seg[1];
  const double mean = node.col(0).mean();
  const double var = (node.col(0).array() - mean).square().sum() / (batch - 1);
  EXPECT_NEAR(mean, 1.0, 3.0 * 0.05 / std::sqrt(batch));
  EXPECT_NEAR(std::sqrt(var), 0.05, 0.02 * 0.05);
}

TEST(Segment, FloorAndConstantTail) {
  TimeGrid g(0.1, 5, 3);
  auto spec =
      InitialSegmentSpec::constant(Eigen::VectorXd::Constant(1, 0.02), 0.5, 0.01, true);
  Segment seg = sample_initial_segment(spec, g, iota_seeds(7, 500));
  // the oldest node carries the exact pre-history constant
  EXPECT_EQ(seg.front(), Mat::Constant(500, 1, 0.02));
  bool any_above = false;
  for (const Mat& m : seg) {
    EXPECT_GE(m.minCoeff(), 0.01);
    any_above = any_above || m.maxCoeff() > 0.02;
  }
  EXPECT_TRUE(any_above);
}

TEST(Segment, DeterministicPerSeed) {
  TimeGrid g(0.1, 5, 4);
  auto spec = InitialSegmentSpec::constant(Eigen::VectorXd::Constant(1, 1.0), 0.05);
  Segment a = sample_initial_segment(spec, g, {42, 43});
  Segment b = sample_initial_segment(spec, g, {42, 43});
  Segment c = sample_initial_segment(spec, g, {43, 42});
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i], b[i]);
    // same seeds in swapped order: rows swap, values unchanged
    EXPECT_EQ(a[i](0, 0), c[i](1, 0));
    EXPECT_EQ(a[i](1, 0), c[i](0, 0));
  }
}

TEST(Brownian, IncrementMoments) {
  TimeGrid g(0.04, 2, 1);
  const int batch = 100000;
  BrownianBatch b = BrownianBatch::sample(g, 1, iota_seeds(1000, batch));
  const auto& col = b.increments[0].col(0);
  const double mean = col.mean();
  const double var = (col.array() - mean).square().sum() / (batch - 1);
  EXPECT_NEAR(mean, 0.0, 3.0 * std::sqrt(g.h / batch));
  EXPECT_NEAR(var, g.h, 0.02 * g.h);
}

TEST(Brownian, ZerosAndDeterminism) {
  TimeGrid g(0.1, 3, 1);
  BrownianBatch z = BrownianBatch::zeros(g, 2, 4);
  for (const Mat& m : z.increments) EXPECT_EQ(m, Mat::Zero(4, 2));
  BrownianBatch a = BrownianBatch::sample(g, 2, {5, 6});
  BrownianBatch b = BrownianBatch::sample(g, 2, {5, 6});
  for (std::size_t k = 0; k < a.increments.size(); ++k) {
    EXPECT_EQ(a.increments[k], b.increments[k]);
  }
}

TEST(Buffer, AccessAndErrors) {
  Tape tape;
  TimeGrid g(0.1, 3, 2);
  PathBuffer buf(g, 1, 2);
  EXPECT_THROW(buf.node(0), BufferError);
  Segment seg(3, Mat::Constant(2, 1, 1.0));
  buf.fill_history(tape, seg);
  EXPECT_EQ(buf.node(-2).value()(0, 0), 1.0);
  EXPECT_THROW(buf.node(1), BufferError);
  EXPECT_THROW(buf.append(tape.leaf(Mat::Zero(2, 3), false)), BufferError);
  buf.append(tape.leaf(Mat::Constant(2, 1, 2.0), false));
  EXPECT_EQ(buf.node(1).value()(0, 0), 2.0);
  Var w = buf.window(1, 2);
  Mat expect(2, 3);
  expect << 1.0, 1.0, 2.0, 1.0, 1.0, 2.0;
  EXPECT_EQ(w.value(), expect);
  Segment bad(2, Mat::Zero(2, 1));
  PathBuffer buf2(g, 1, 2);
  EXPECT_THROW(buf2.fill_history(tape, bad), BufferError);
}

// int_{-0.8}^{0} e^{0.1 s} ds = (1 - e^{-0.08}) / 0.1 on a constant unit path.
TEST(Delay, ConstantPathAgainstClosedFormIntegral) {
  Tape tape;
  TimeGrid g = TimeGrid::from_horizon(2.0, 60, 0.8);
  PathBuffer buf = scalar_path(tape, g, [](double) { return 1.0; });
  const double exact = (1.0 - std::exp(-0.08)) / 0.1;
  for (int k : {0, 30, 60}) {
    Var y = distributed_delay(buf, k, 0.1, g);
    EXPECT_NEAR(y.value()(0, 0), exact, 1e-4 * exact);
  }
}

// At lambda = 0 the scheme is the plain midpoint rule, exact on linear paths.
TEST(Delay, LinearPathExactAtZeroLambda) {
  Tape tape;
  TimeGrid g(0.25, 4, 4);  // delta = 1
  PathBuffer buf = scalar_path(tape, g, [](double t) { return 2.0 + 3.0 * t; });
  // int_{-1}^{0} (2 + 3(t_k + s)) ds = 2 + 3 t_k - 1.5
  for (int k : {0, 2, 4}) {
    const double exact = 2.0 + 3.0 * g.time(k) - 1.5;
    EXPECT_NEAR(distributed_delay(buf, k, 0.0, g).value()(0, 0), exact, 1e-13);
  }
}

// Smooth path: halving h cuts the quadrature error by ~4 (second order).
TEST(Delay, SecondOrderConvergence) {
  const double lambda = 0.1, delta = 1.0;
  const double exact = (1.0 - std::exp(-(lambda + 1.0) * delta)) / (lambda + 1.0);
  auto error_at = [&](int n_hist) {
    Tape tape;
    TimeGrid g(delta / n_hist, 1, n_hist);
    PathBuffer buf = scalar_path(tape, g, [](double t) { return std::exp(t); });
    return std::abs(distributed_delay(buf, 0, lambda, g).value()(0, 0) - exact);
  };
  const double e1 = error_at(16), e2 = error_at(32);
  EXPECT_GT(e1 / e2, 3.7);
  EXPECT_LT(e1 / e2, 4.3);
}

TEST(Delay, DiscreteDelayPicksLaggedNode) {
  Tape tape;
  TimeGrid g(0.5, 2, 2);  // delta = 1
  PathBuffer buf = scalar_path(tape, g, [](double t) { return t; });
  EXPECT_DOUBLE_EQ(discrete_delay(buf, 0, g).value()(0, 0), -1.0);
  EXPECT_DOUBLE_EQ(discrete_delay(buf, 2, g).value()(0, 0), 0.0);
}

// Constant unit path with infinite memory: Y = int_{-inf}^0 e^{lambda s} ds = 1/lambda;
// the pre-window tail alone contributes e^{-lambda W} / lambda.
TEST(Delay, InfiniteMemoryConstantPath) {
  Tape tape;
  TimeGrid g = TimeGrid::from_horizon(5.0, 100, 4.0);  // window W = 4
  PathBuffer buf = scalar_path(tape, g, [](double) { return 1.0; });
  const double lambda = 0.3;
  for (int k : {0, 50, 100}) {
    Var y = distributed_delay_infinite(buf, k, lambda, g, tape,
                                       Eigen::VectorXd::Constant(1, 1.0));
    EXPECT_NEAR(y.value()(0, 0), 1.0 / lambda, 1e-4 / lambda);
  }
  // zero tail constant removes exactly the closed-form tail mass
  Var y0 = distributed_delay_infinite(buf, 0, lambda, g, tape, Eigen::VectorXd::Zero(1));
  const double tail = std::exp(-lambda * 4.0) / lambda;
  EXPECT_NEAR(y0.value()(0, 0), 1.0 / lambda - tail, 1e-4 / lambda);
  EXPECT_THROW(distributed_delay_infinite(buf, 0, 0.0, g, tape, Eigen::VectorXd::Zero(1)),
               std::invalid_argument);
}

DynamicsModel toy_model() {
  DynamicsModel m;
  m.name = "toy";
  m.state_dim = 1;
  m.control_dim = 1;
  m.noise_dim = 1;
  m.memory = MemoryKind::FiniteWindow;
  m.drift = [](Tape&, const Observables& obs, const Var& pi) {
    return ad::add(ad::scale(obs.x, 0.3), pi);
  };
  m.diffusion = [](Tape& tape, const Observables&, const Var&, const Mat& dW) {
    return ad::scale(tape.leaf(dW, false), 0.2);
  };
  m.running_cost = [](Tape&, const Observables& obs, const Var& pi) {
    return ad::add(ad::square(obs.x), ad::square(pi));
  };
  m.terminal_cost = [](Tape&, const Observables& obs) { return ad::square(obs.x); };
  return m;
}

TEST(Rollout, ZeroDynamicsKeepsState) {
  DynamicsModel m = toy_model();
  m.drift = [](Tape& t, const Observables& obs, const Var&) {
    return t.leaf(Mat::Zero(obs.x.value().rows(), 1), false);
  };
  m.diffusion = [](Tape& t, const Observables& obs, const Var&, const Mat&) {
    return t.leaf(Mat::Zero(obs.x.value().rows(), 1), false);
  };
  TimeGrid g(0.1, 4, 2);
  Tape tape;
  Segment seg(3, Mat::Constant(2, 1, 0.7));
  FunctionalPolicy zero(1, [](Tape& t, const PathBuffer& buf, int) {
    return t.leaf(Mat::Zero(buf.batch(), 1), false);
  });
  auto res = rollout(m, zero, tape, seg, BrownianBatch::zeros(g, 1, 2), g);
  EXPECT_EQ(res.path.node(4).value(), Mat::Constant(2, 1, 0.7));
  // objective = sum_k x^2 h + x_T^2 = 0.49 * (4 * 0.1 + 1)
  EXPECT_NEAR(res.objective.value()(0, 0), 0.49 * 1.4, 1e-12);
  EXPECT_EQ(res.penalty.value(), Mat::Zero(2, 1));
}

TEST(Rollout, ConstantDriftEulerUpdate) {
  DynamicsModel m = toy_model();
  m.drift = [](Tape& t, const Observables& obs, const Var&) {
    return t.leaf(Mat::Constant(obs.x.value().rows(), 1, 2.0), false);
  };
  m.diffusion = [](Tape& t, const Observables& obs, const Var&, const Mat&) {
    return t.leaf(Mat::Zero(obs.x.value().rows(), 1), false);
  };
  TimeGrid g(0.1, 3, 1);
  Tape tape;
  Segment seg(2, Mat::Zero(1, 1));
  FunctionalPolicy zero(1, [](Tape& t, const PathBuffer& buf, int) {
    return t.leaf(Mat::Zero(buf.batch(), 1), false);
  });
  auto res = rollout(m, zero, tape, seg, BrownianBatch::zeros(g, 1, 1), g);
  for (int j = 0; j <= 3; ++j) {
    EXPECT_NEAR(res.path.node(j).value()(0, 0), 2.0 * g.time(j), 1e-14);
  }
}

TEST(Rollout, DeterministicGivenInputs) {
  DynamicsModel m = toy_model();
  TimeGrid g(0.1, 5, 2);
  auto spec = InitialSegmentSpec::constant(Eigen::VectorXd::Constant(1, 0.5), 0.05);
  Segment seg = sample_initial_segment(spec, g, iota_seeds(1, 4));
  BrownianBatch noise = BrownianBatch::sample(g, 1, iota_seeds(11, 4));
  FeedforwardPolicy policy(1, 2, {8}, 1);
  policy.init_parameters(5);
  Tape t1, t2;
  auto r1 = rollout(m, policy, t1, seg, noise, g);
  auto r2 = rollout(m, policy, t2, seg, noise, g);
  EXPECT_EQ(r1.objective.value(), r2.objective.value());
  EXPECT_EQ(r1.path.node(5).value(), r2.path.node(5).value());
}

TEST(Rollout, PenaltyCountsNegativeExcursions) {
  DynamicsModel m = toy_model();
  m.positivity_constrained = true;
  m.drift = [](Tape& t, const Observables& obs, const Var&) {
    return t.leaf(Mat::Constant(obs.x.value().rows(), 1, -2.0), false);
  };
  m.diffusion = [](Tape& t, const Observables& obs, const Var&, const Mat&) {
    return t.leaf(Mat::Zero(obs.x.value().rows(), 1), false);
  };
  TimeGrid g(0.1, 2, 1);
  Tape tape;
  Segment seg(2, Mat::Zero(1, 1));  // X drops to -0.2 then -0.4
  FunctionalPolicy zero(1, [](Tape& t, const PathBuffer& buf, int) {
    return t.leaf(Mat::Zero(buf.batch(), 1), false);
  });
  auto res = rollout(m, zero, tape, seg, BrownianBatch::zeros(g, 1, 1), g);
  EXPECT_NEAR(res.penalty.value()(0, 0), (0.2 + 0.4) * 0.1, 1e-14);
}

TEST(Rollout, NonFiniteStateRaises) {
  DynamicsModel m = toy_model();
  m.drift = [](Tape& t, const Observables& obs, const Var&) {
    return t.leaf(Mat::Constant(obs.x.value().rows(), 1,
                                std::numeric_limits<double>::quiet_NaN()),
                  false);
  };
  TimeGrid g(0.1, 2, 1);
  Tape tape;
  Segment seg(2, Mat::Zero(1, 1));
  FunctionalPolicy zero(1, [](Tape& t, const PathBuffer& buf, int) {
    return t.leaf(Mat::Zero(buf.batch(), 1), false);
  });
  EXPECT_THROW(rollout(m, zero, tape, seg, BrownianBatch::zeros(g, 1, 1), g), NumericalError);
}

// End-to-end gradient through the unrolled dynamics vs finite differences on
// the feedforward parameters.
TEST(Rollout, GradientMatchesFiniteDifferences) {
  DynamicsModel m = toy_model();
  TimeGrid g(0.1, 5, 2);
  auto spec = InitialSegmentSpec::constant(Eigen::VectorXd::Constant(1, 0.5), 0.05);
  Segment seg = sample_initial_segment(spec, g, iota_seeds(21, 4));
  BrownianBatch noise = BrownianBatch::sample(g, 1, iota_seeds(31, 4));
  FeedforwardPolicy policy(1, 2, {8}, 1);
  policy.init_parameters(9);

  auto eval_loss = [&]() {
    Tape tape;
    auto res = rollout(m, policy, tape, seg, noise, g, false);
    return ad::mean_all(res.objective).value()(0, 0);
  };

  Tape tape;
  auto ctx = policy.bind(tape, true);
  auto res = rollout(m, *ctx, tape, seg, noise, g);
  Var loss = ad::mean_all(res.objective);
  tape.backward(loss);
  std::vector<Var> bound = ctx->bound_params();

  auto& params = policy.parameters();
  ASSERT_EQ(bound.size(), params.size());
  const double step = 1e-6;
  double worst = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Mat& v = params[i].value;
    for (long r = 0; r < v.rows(); ++r) {
      for (long c = 0; c < v.cols(); ++c) {
        const double orig = v(r, c);
        v(r, c) = orig + step;
        const double up = eval_loss();
        v(r, c) = orig - step;
        const double down = eval_loss();
        v(r, c) = orig;
        const double fd = (up - down) / (2.0 * step);
        const double an = bound[i].grad()(r, c);
        const double denom = std::max({std::abs(fd), std::abs(an), 1e-4});
        worst = std::max(worst, std::abs(fd - an) / denom);
      }
    }
  }
  EXPECT_LT(worst, 1e-4);
}

}  // namespace
}  // namespace sddec
