#include <gtest/gtest.h>

#include <cmath>

#include "mpcil/experiments.hpp"
#include "mpcil/integrity.hpp"
#include "mpcil/trainer.hpp"
#include "test_common.hpp"

namespace mpcil {
namespace {

using testing::DemoFromTape;
using testing::Share;

TEST(Bptt, MatchesFiniteDifferencesForEveryPolicyKind) {
  for (PolicyKind kind :
       {PolicyKind::kStaticD1, PolicyKind::kMlpD2, PolicyKind::kBaseline}) {
    int stable = 0;
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
      const BpttCase c = MakeBpttCase(kind, seed);
      const BpttFdResult r = CheckBpttFd(c, 1.0, 0.0, seed);
      if (!r.ok || !r.stable) continue;
      ++stable;
      EXPECT_LE(r.rel_error, 1e-3) << PolicyKindName(kind) << " seed " << seed;
    }
    EXPECT_GE(stable, 2) << PolicyKindName(kind);
  }
}

TEST(Bptt, OwnRolloutAsDemoGivesZero) {
  auto track = Share(DefaultTrack());
  const Policy p = InitialPolicy(PolicyKind::kStaticD1, track, 1);
  RolloutOptions ro;
  ro.duration = 2.0;
  ro.record_grads = true;
  const RolloutTape tape = Rollout(p, *track, MakeState(0, 0, 90, 0.8, 0.02, 0), ro);
  const BpttResult r = BpttGradient(tape, DemoFromTape(tape, *track), 5);
  EXPECT_EQ(r.loss, 0.0);
  EXPECT_EQ(r.grad.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Bptt, ScoredWindowAtHorizonKeepsOnlyFinalTerm) {
  auto track = Share(DefaultTrack());
  const Policy p = InitialPolicy(PolicyKind::kStaticD1, track, 1);
  RolloutOptions ro;
  ro.duration = 1.0;
  ro.record_grads = true;
  const RolloutTape tape = Rollout(p, *track, MakeState(0, 0, 90, 0.8, 0.02, 0), ro);
  DemoTrajectory demo = DemoFromTape(tape, *track);
  for (auto& s : demo.states) s(kD) -= 0.3;
  const BpttResult r = BpttGradient(tape, demo, tape.steps());
  EXPECT_NEAR(r.loss, 0.09, 1e-12);
  EXPECT_EQ(r.grad.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_NEAR(r.state_adjoint(kD), 0.6, 1e-12);
}

// d+ = d + beta a, a = theta + k d, target 0, scored from t = 1 to 3.
TEST(Bptt, HandComputedLinearRecursion) {
  const double beta = 0.1, k = -0.5, theta = 0.2;
  RolloutTape tape;
  tape.dt = 0.1;
  tape.num_params = 1;
  tape.grad_start_step = 1;
  VehicleState x = MakeState(0, 0, 0, 0.7, 0, 0);
  tape.states.push_back(x);
  for (int t = 0; t < 3; ++t) {
    const double a = theta + k * x(kD);
    tape.actions.push_back(a);
    Vec6 da = Vec6::Zero();
    da(kD) = beta;
    tape.plant_ds.push_back(Mat6::Identity());
    tape.plant_da.push_back(da);
    Vec6 ds = Vec6::Zero();
    ds(kD) = k;
    tape.policy_ds.push_back(ds);
    tape.policy_draw.push_back(t >= 1 ? Eigen::VectorXd::Ones(1) : Eigen::VectorXd());
    tape.flags.emplace_back();
    x(kD) += beta * a;
    tape.states.push_back(x);
  }
  DemoTrajectory demo;
  demo.dt = 0.1;
  demo.states.assign(4, VehicleState::Zero());
  const double d2 = tape.states[2](kD), d3 = tape.states[3](kD);
  const double expected = beta * 2 * d3 + beta * (2 * d2 + (1 + beta * k) * 2 * d3);
  const BpttResult r = BpttGradient(tape, demo, 1);
  EXPECT_NEAR(r.grad(0), expected, 1e-15);
  const double d1 = tape.states[1](kD);
  EXPECT_NEAR(r.loss, d1 * d1 + d2 * d2 + d3 * d3, 1e-15);
}

TEST(Bptt, RejectsMisalignedInputs) {
  auto track = Share(DefaultTrack());
  const Policy p = InitialPolicy(PolicyKind::kStaticD1, track, 1);
  RolloutOptions ro;
  ro.duration = 1.0;
  ro.record_grads = true;
  const RolloutTape tape = Rollout(p, *track, MakeState(0, 0, 0, 0.1, 0, 0), ro);
  DemoTrajectory demo = DemoFromTape(tape, *track);
  DemoTrajectory shifted = demo;
  shifted.dt = 0.05;
  EXPECT_THROW(BpttGradient(tape, shifted, 0), std::invalid_argument);
  DemoTrajectory shorter = demo;
  shorter.states.pop_back();
  EXPECT_THROW(BpttGradient(tape, shorter, 0), std::invalid_argument);
  EXPECT_THROW(BpttGradient(tape, demo, 11), std::invalid_argument);
  ro.record_grads = false;
  EXPECT_THROW(BpttGradient(Rollout(p, *track, MakeState(0, 0, 0, 0.1, 0, 0), ro),
                            demo, 0),
               std::invalid_argument);
}

TEST(Adam, ZeroGradientLeavesParameters) {
  AdamState s(3);
  s.m = Eigen::Vector3d(1, 2, 3);
  Eigen::VectorXd x = Eigen::Vector3d(0.5, -1, 2);
  const Eigen::VectorXd before = x;
  s.v = Eigen::Vector3d(1e6, 1e6, 1e6);
  AdamStep(s, x, Eigen::VectorXd::Zero(3), 1e-3);
  EXPECT_NEAR((x - before).norm(), 0.0, 1e-4);
  EXPECT_EQ(s.m, Eigen::Vector3d(0.9, 1.8, 2.7));
  Eigen::VectorXd y = before;
  AdamState fresh(3);
  AdamStep(fresh, y, Eigen::VectorXd::Zero(3), 1e-3);
  EXPECT_EQ(y, before);
}

TEST(Adam, FirstStepHasLearningRateMagnitude) {
  AdamState s(3);
  Eigen::VectorXd x = Eigen::VectorXd::Zero(3);
  const Eigen::VectorXd g = Eigen::Vector3d(0.3, -20, 1e-3);
  AdamStep(s, x, g, 0.01);
  for (int i = 0; i < 3; ++i) {
    EXPECT_NEAR(x(i), -0.01 * g(i) / (std::abs(g(i)) + 1e-8), 1e-12);
  }
}

TEST(Adam, Deterministic) {
  AdamState a(2), b(2);
  Eigen::VectorXd x = Eigen::Vector2d(1, 2), y = x;
  for (int k = 0; k < 5; ++k) {
    const Eigen::VectorXd g = Eigen::Vector2d(std::sin(k), std::cos(k));
    AdamStep(a, x, g, 0.1);
    AdamStep(b, y, g, 0.1);
  }
  EXPECT_EQ(x, y);
}

TEST(Sl, EmptyDatasetThrows) {
  auto track = Share(DefaultTrack(TrackPreset::kD2));
  EXPECT_THROW(PretrainSlDbar(InitialPolicy(PolicyKind::kMlpD2, track, 1), *track,
                              {}, SlConfig{}),
               std::exception);
}

TEST(Sl, ConstantTargetOnLoopIsLearned) {
  auto loop = Share(TrackSpec({{200 * M_PI, 0.01}}, 8.0));
  DemoTrajectory demo;
  demo.dt = 0.1;
  demo.lane_width = 8.0;
  const double vx = VehicleParams{}.v_x;
  for (int t = 0; t <= 400; ++t) {
    demo.states.push_back(MakeState(0, 0, vx * 0.1 * t, -0.7, 0, 0));
  }
  const SlResult r = PretrainSlDbar(InitialPolicy(PolicyKind::kMlpD2, loop, 2), *loop,
                                    {demo}, SlConfig{});
  EXPECT_NEAR(r.policy.Dbar(loop->Preview(10.0)), -0.7, 0.02);
  EXPECT_LT(r.loss_history.back(), r.loss_history.front());
}

TEST(Trainer, ZeroBaselineOnCenterlineHasNoLossOrGradient) {
  auto road = Share(StraightTrack(2000, 4.5));
  Policy p = InitialPolicy(PolicyKind::kBaseline, road, 1);
  p.set_raw(Eigen::VectorXd::Zero(p.num_params()));
  RolloutOptions ro;
  ro.duration = 2.0;
  ro.record_grads = true;
  const RolloutTape tape = Rollout(p, *road, VehicleState::Zero(), ro);
  DemoTrajectory demo = DemoFromTape(tape, *road);
  for (auto& s : demo.states) s(kD) = 0.0;
  const BpttResult r = BpttGradient(tape, demo, 0);
  EXPECT_EQ(r.loss, 0.0);
  EXPECT_EQ(r.grad.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Trainer, ConfigValidation) {
  TrainConfig cfg;
  EXPECT_NO_THROW(cfg.Validate());
  EXPECT_EQ(cfg.Steps(), 100);
  EXPECT_EQ(cfg.ScoredStart(), 50);
  cfg.t_s = 11.0;
  EXPECT_THROW(cfg.Validate(), std::exception);
  cfg = TrainConfig{};
  cfg.batch_size = 0;
  EXPECT_THROW(cfg.Validate(), std::exception);
}

// A short static-D1 run on expert windows lowers the validation loss.
TEST(Trainer, StaticD1RunImprovesValidationLoss) {
  auto track = Share(DefaultTrack());
  ExpertSpec expert;
  expert.noise_std = 0.0;
  const auto laps = GenerateDemos(*track, expert, 1);
  PreparedData data = PrepareData(laps, 0.1, 10.0, 30.0, 0);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 5;
  const TrainResult r =
      TrainBco(InitialPolicy(PolicyKind::kStaticD1, track, 1), *track, data.train,
               data.val, cfg);
  ASSERT_FALSE(r.report.history.empty());
  EXPECT_LT(r.report.best_val_loss, r.report.initial_val_loss);
  EXPECT_LT(r.policy.raw()(3), 0.0);
  for (std::size_t e = 1; e < r.report.history.size(); ++e) {
    EXPECT_LE(r.report.history[e].val_loss, 1.1 * r.report.history[e - 1].val_loss);
  }
}

}  // namespace
}  // namespace mpcil
