#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <random>

#include "sddec/checkpoint.hpp"
#include "sddec/path.hpp"
#include "sddec/policy.hpp"
#include "test_util.hpp"

namespace sddec {
namespace {

using ad::Mat;
using ad::Tape;
using ad::Var;
using testing::random_mat;

PathBuffer constant_history(Tape& tape, const TimeGrid& grid, const Mat& x0) {
  PathBuffer buf(grid, static_cast<int>(x0.cols()), static_cast<int>(x0.rows()));
  Segment seg(static_cast<std::size_t>(grid.n_history) + 1, x0);
  buf.fill_history(tape, seg);
  return buf;
}

TEST(ParameterCount, MatchesReportedArchitectures) {
  // consumption: scalar state, 24-step lag window, two hidden layers of 54
  EXPECT_EQ(FeedforwardPolicy(1, 24, {54, 54}, 1).parameter_count(), 4483u);
  // portfolio: scalar state, full 80-step window (input dim 82), widths 96
  EXPECT_EQ(FeedforwardPolicy(1, 80, {96, 96}, 2).parameter_count(), 17474u);
  EXPECT_EQ(LstmPolicy(10, 200, 10).parameter_count(), 171610u);
  EXPECT_EQ(LstmPolicy(1, 30, 1).parameter_count(), 3991u);
  EXPECT_EQ(LstmPolicy(1, 60, 2).parameter_count(), 15242u);
}

TEST(Feedforward, ZeroParametersGiveZeroControl) {
  FeedforwardPolicy policy(2, 3, {5}, 2);  // default-initialized to zero
  Tape tape;
  TimeGrid g(0.1, 2, 3);
  PathBuffer buf = constant_history(tape, g, random_mat(4, 2, *[] {
                                      static std::mt19937_64 rng(1);
                                      return &rng;
                                    }()));
  auto ctx = policy.bind(tape, false);
  ctx->begin(buf);
  EXPECT_EQ(ctx->act(buf, 0).value(), Mat::Zero(4, 2));
}

TEST(Feedforward, OutputDependsOnlyOnWindowAndTime) {
  FeedforwardPolicy policy(1, 2, {7}, 1);
  policy.init_parameters(3);
  TimeGrid g(0.25, 4, 2);
  // two different histories that agree on the window ending at t_0
  Mat win = Mat::Constant(1, 1, 0.8);
  Tape t1, t2;
  PathBuffer b1 = constant_history(t1, g, win);
  PathBuffer b2(g, 1, 1);
  Segment seg2 = {Mat::Constant(1, 1, 0.8), Mat::Constant(1, 1, 0.8), Mat::Constant(1, 1, 0.8)};
  b2.fill_history(t2, seg2);
  auto c1 = policy.bind(t1, false);
  auto c2 = policy.bind(t2, false);
  EXPECT_EQ(c1->act(b1, 0).value(), c2->act(b2, 0).value());
  // but it does respond to the time feature
  b1.append(t1.leaf(win, false));
  EXPECT_NE(c1->act(b1, 1).value()(0, 0), c1->act(b1, 0).value()(0, 0));
}

TEST(Feedforward, ClampMasksSelectedCoordinates) {
  FeedforwardPolicy policy(1, 1, {16}, 2, {false, true});
  policy.init_parameters(11);
  TimeGrid g(0.1, 2, 1);
  bool saw_negative_free = false;
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    Tape tape;
    PathBuffer buf = constant_history(tape, g, random_mat(8, 1, rng));
    auto ctx = policy.bind(tape, false);
    Mat out = ctx->act(buf, 0).value();
    EXPECT_GE(out.col(1).minCoeff(), 0.0);
    saw_negative_free = saw_negative_free || out.col(0).minCoeff() < 0.0;
  }
  EXPECT_TRUE(saw_negative_free);
}

TEST(Feedforward, RejectsBadConfig) {
  EXPECT_THROW(FeedforwardPolicy(1, -1, {4}, 1), std::invalid_argument);
  EXPECT_THROW(FeedforwardPolicy(1, 2, {4}, 2, {true}), std::invalid_argument);
}

TEST(Lstm, InitialStateIsPaddedSegmentStart) {
  LstmPolicy policy(2, 5, 1);
  Tape tape;
  TimeGrid g(0.1, 1, 0);  // no warm-up steps: state stays at its initialization
  Mat x0(1, 2);
  x0 << 0.3, -0.7;
  PathBuffer buf = constant_history(tape, g, x0);
  auto ctx = policy.bind(tape, false);
  auto* lstm = dynamic_cast<LstmPolicy::Ctx*>(ctx.get());
  ASSERT_NE(lstm, nullptr);
  lstm->begin(buf);
  Mat expect(1, 5);
  expect << 0.3, -0.7, 0.0, 0.0, 0.0;
  EXPECT_EQ(lstm->h.value(), expect);
  EXPECT_EQ(lstm->c.value(), expect);
}

TEST(Lstm, ZeroParameterStepHalvesCellState) {
  // all weights/biases zero: every gate is sigmoid(0) = 1/2 and the candidate
  // is tanh(0) = 0, so c -> c/2 and h -> tanh(c/2)/2
  LstmPolicy policy(1, 3, 1);
  Tape tape;
  TimeGrid g(0.1, 1, 0);
  Mat x0 = Mat::Constant(1, 1, 0.8);
  PathBuffer buf = constant_history(tape, g, x0);
  auto ctx = policy.bind(tape, false);
  auto* lstm = dynamic_cast<LstmPolicy::Ctx*>(ctx.get());
  lstm->begin(buf);
  Mat c_prev = lstm->c.value();
  Var control = lstm->act(buf, 0);
  EXPECT_TRUE(lstm->c.value().isApprox(0.5 * c_prev, 1e-15));
  EXPECT_TRUE(lstm->h.value().isApprox((0.5 * c_prev).array().tanh().matrix() * 0.5, 1e-15));
  EXPECT_EQ(control.value(), Mat::Zero(1, 1));
}

TEST(Lstm, StepIsMarkovInStateAndInput) {
  LstmPolicy policy(1, 6, 1);
  policy.init_parameters(23);
  TimeGrid g(0.1, 2, 1);
  Mat x0 = Mat::Constant(3, 1, 0.4);
  auto run = [&]() {
    Tape tape;
    PathBuffer buf = constant_history(tape, g, x0);
    auto ctx = policy.bind(tape, false);
    ctx->begin(buf);
    return ctx->act(buf, 0).value();
  };
  EXPECT_EQ(run(), run());
}

TEST(Lstm, WarmupConsumesHistory) {
  LstmPolicy policy(1, 4, 1);
  policy.init_parameters(31);
  // different history interiors must lead to different controls at t_0
  TimeGrid g(0.25, 1, 4);
  Tape t1, t2;
  Segment s1(5, Mat::Constant(1, 1, 1.0));
  Segment s2 = s1;
  s2[2] = Mat::Constant(1, 1, 2.0);  // same endpoints, different interior
  PathBuffer b1(g, 1, 1), b2(g, 1, 1);
  b1.fill_history(t1, s1);
  b2.fill_history(t2, s2);
  auto c1 = policy.bind(t1, false);
  auto c2 = policy.bind(t2, false);
  c1->begin(b1);
  c2->begin(b2);
  EXPECT_NE(c1->act(b1, 0).value()(0, 0), c2->act(b2, 0).value()(0, 0));
}

TEST(Lstm, RejectsHiddenSmallerThanState) {
  EXPECT_THROW(LstmPolicy(10, 5, 1), std::invalid_argument);
  EXPECT_THROW(LstmPolicy(1, 4, 2, {true}), std::invalid_argument);
}

TEST(Lstm, ForgetGateBiasInitializedToOne) {
  LstmPolicy policy(1, 8, 1);
  policy.init_parameters(7);
  const Mat& b = policy.parameters()[2].value;
  EXPECT_EQ(b.middleCols(0, 8), Mat::Ones(1, 8));
  EXPECT_EQ(b.middleCols(8, 24), Mat::Zero(1, 24));
}

TEST(Init, GlorotRangeAndMoments) {
  std::mt19937_64 rng(5);
  Mat small(3, 3);
  detail::glorot_fill(small, 3, 3, rng);  // scale sqrt(6/6) = 1
  EXPECT_LE(small.cwiseAbs().maxCoeff(), 1.0);

  const int n = 100000;
  Mat big(n, 1);
  detail::glorot_fill(big, 40, 60, rng);
  const double a = std::sqrt(6.0 / 100.0);
  const double mean = big.mean();
  const double std_dev = std::sqrt((big.array() - mean).square().sum() / (n - 1));
  EXPECT_NEAR(std_dev, a / std::sqrt(3.0), 0.02 * a / std::sqrt(3.0));
  EXPECT_NEAR(mean, 0.0, 3.0 * a / std::sqrt(3.0 * n));
}

TEST(Init, DeterministicPerSeed) {
  FeedforwardPolicy a(1, 4, {12}, 1), b(1, 4, {12}, 1), c(1, 4, {12}, 1);
  a.init_parameters(99);
  b.init_parameters(99);
  c.init_parameters(100);
  for (std::size_t i = 0; i < a.parameters().size(); ++i) {
    EXPECT_EQ(a.parameters()[i].value, b.parameters()[i].value);
  }
  EXPECT_NE(a.parameters()[0].value, c.parameters()[0].value);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  LstmPolicy policy(2, 6, 2, {false, true});
  policy.init_parameters(13);
  const std::string path = ::testing::TempDir() + "ckpt_roundtrip.txt";
  save_checkpoint(policy.parameters(), path);
  LstmPolicy fresh(2, 6, 2, {false, true});
  restore_parameters(fresh, load_checkpoint(path));
  for (std::size_t i = 0; i < policy.parameters().size(); ++i) {
    EXPECT_EQ(policy.parameters()[i].name, fresh.parameters()[i].name);
    EXPECT_EQ(policy.parameters()[i].value, fresh.parameters()[i].value);
  }
  std::remove(path.c_str());
}

TEST(Checkpoint, MismatchRejected) {
  FeedforwardPolicy a(1, 2, {4}, 1);
  a.init_parameters(1);
  const std::string path = ::testing::TempDir() + "ckpt_mismatch.txt";
  save_checkpoint(a.parameters(), path);
  FeedforwardPolicy wrong_shape(1, 3, {4}, 1);
  EXPECT_THROW(restore_parameters(wrong_shape, load_checkpoint(path)), std::runtime_error);
  LstmPolicy wrong_kind(1, 4, 1);
  EXPECT_THROW(restore_parameters(wrong_kind, load_checkpoint(path)), std::runtime_error);
  EXPECT_THROW(load_checkpoint(path + ".missing"), std::runtime_error);
  std::remove(path.c_str());
}

}  // namespace
}  // namespace sddec
