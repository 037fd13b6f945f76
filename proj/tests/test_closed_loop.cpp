#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "mpcil/closed_loop.hpp"
#include "mpcil/experiments.hpp"
#include "mpcil/integrity.hpp"
#include "test_common.hpp"

namespace mpcil {
namespace {

using testing::Share;
using testing::Uniform;

TEST(LatentQ, MatchesTrackPreview) {
  const TrackSpec t = DefaultTrack();
  for (double sigma = 0; sigma < 1200; sigma += 23) {
    const VehicleState s = MakeState(0.1, 0, sigma, 1.0, 0.1, 0);
    EXPECT_EQ(LatentQ(t, s), t.Preview(sigma));
  }
  for (double k : LatentQ(StraightTrack(100, 4.5), VehicleState::Zero())) {
    EXPECT_EQ(k, 0.0);
  }
}

TEST(Rollout, CountsAndEquilibrium) {
  auto track = Share(StraightTrack(1000, 4.5));
  const Policy p = Policy::StaticD1(MakeOcpSpec(track, CostVariant::kD1Stage),
                                    InitialStaticRaw());
  RolloutOptions ro;
  ro.duration = 10.0;
  const RolloutTape tape = Rollout(p, *track, VehicleState::Zero(), ro);
  EXPECT_EQ(tape.steps(), 100);
  EXPECT_EQ(tape.states.size(), 101u);
  for (const auto& s : tape.states) {
    for (int j : {kVy, kYawRate, kD, kThetaE, kDelta}) EXPECT_EQ(s(j), 0.0);
  }
  for (double a : tape.actions) EXPECT_EQ(a, 0.0);
}

TEST(Rollout, PlantStepsMatchStepRk4) {
  auto track = Share(DefaultTrack());
  const Policy p = InitialPolicy(PolicyKind::kStaticD1, track, 1);
  RolloutOptions ro;
  ro.duration = 3.0;
  const RolloutTape tape =
      Rollout(p, *track, MakeState(0, 0, 250, 1.0, 0.02, 0), ro);
  for (int t = 0; t < tape.steps(); ++t) {
    EXPECT_EQ(tape.states[t + 1],
              StepRk4(tape.states[t], tape.actions[t], ro.plant, *track, ro.dt));
    EXPECT_EQ(tape.latents[t], LatentQ(*track, tape.states[t]));
  }
}

TEST(Rollout, StaysInLaneFromRandomStarts) {
  auto track = Share(DefaultTrack());
  const Policy p = InitialPolicy(PolicyKind::kStaticD1, track, 1);
  std::mt19937_64 rng(51);
  RolloutOptions ro;
  ro.duration = 5.0;
  for (int i = 0; i < 4; ++i) {
    const VehicleState s0 =
        MakeState(0, 0, Uniform(rng, 0, 1200), Uniform(rng, -0.9, 0.9) * track->half_width(),
                  Uniform(rng, -0.03, 0.03), 0);
    const RolloutTape tape = Rollout(p, *track, s0, ro);
    for (const auto& s : tape.states) {
      EXPECT_LE(std::abs(s(kD)), track->half_width() + 1e-6);
    }
  }
}

TEST(Rollout, RecordedPlantJacobiansMatchFiniteDifferences) {
  auto track = Share(DefaultTrack());
  const Policy p = InitialPolicy(PolicyKind::kStaticD1, track, 1);
  RolloutOptions ro;
  ro.duration = 1.0;
  ro.record_grads = true;
  ro.grad_start_step = 3;
  const RolloutTape tape = Rollout(p, *track, MakeState(0, 0, 95, 0.5, 0, 0), ro);
  ASSERT_EQ(tape.plant_ds.size(), 10u);
  EXPECT_EQ(tape.num_params, 4);
  EXPECT_EQ(tape.policy_draw[0].size(), 0);
  EXPECT_EQ(tape.policy_draw[3].size(), 4);
  for (int t = 0; t < tape.steps(); ++t) {
    const VehicleState& x = tape.states[t];
    const double u = tape.actions[t];
    for (int c : {kVy, kD, kThetaE}) {
      VehicleState xp = x, xm = x;
      xp(c) += 1e-6;
      xm(c) -= 1e-6;
      const Vec6 fd = (StepRk4(xp, u, ro.plant, *track) -
                       StepRk4(xm, u, ro.plant, *track)) / 2e-6;
      EXPECT_LT((fd - tape.plant_ds[t].col(c)).norm(), 1e-6);
    }
    EXPECT_EQ(tape.plant_da[t](kDelta), ro.dt);
  }
}

TEST(Rollout, Reproducible) {
  auto track = Share(DefaultTrack(TrackPreset::kD2));
  const Policy p = InitialPolicy(PolicyKind::kMlpD2, track, 4);
  RolloutOptions ro;
  ro.duration = 2.0;
  ro.record_grads = true;
  const VehicleState s0 = MakeState(0, 0, 700, -1.5, 0.02, 0);
  const RolloutTape a = Rollout(p, *track, s0, ro);
  const RolloutTape b = Rollout(p, *track, s0, ro);
  EXPECT_EQ(a.actions, b.actions);
  for (int t = 0; t < a.steps(); ++t) EXPECT_EQ(a.policy_draw[t], b.policy_draw[t]);
}

TEST(Rollout, SolverFailuresReuseActionThenAbort) {
  auto track = Share(DefaultTrack());
  Policy p = InitialPolicy(PolicyKind::kStaticD1, track, 1);
  p.mutable_ocp().solver.max_iterations = 0;
  RolloutOptions ro;
  ro.duration = 2.0;
  const VehicleState s0 = MakeState(0, 0, 100, 1.0, 0, 0);
  EXPECT_THROW(Rollout(p, *track, s0, ro), RolloutAbortedError);
  ro.max_consecutive_failures = 1000;
  const RolloutTape tape = Rollout(p, *track, s0, ro);
  EXPECT_TRUE(tape.degraded);
  for (int t = 1; t < tape.steps(); ++t) {
    EXPECT_TRUE(tape.flags[t].reused_action);
    EXPECT_EQ(tape.actions[t], tape.actions[t - 1]);
  }
}

TEST(Rollout, LeavingTheFrenetDomainAborts) {
  auto track = Share(TrackSpec({{30, 0.0}, {300, 0.2}}, 8.0));
  Policy p = InitialPolicy(PolicyKind::kBaseline, track, 1);
  p.set_raw(Eigen::VectorXd::Zero(p.num_params()));
  RolloutOptions ro;
  ro.duration = 10.0;
  EXPECT_THROW(Rollout(p, *track, MakeState(0, 0, 0, 0, 0.3, 0), ro),
               RolloutAbortedError);
}

TEST(Rollout, CsvHeaderAndRows) {
  auto track = Share(DefaultTrack());
  const Policy p = InitialPolicy(PolicyKind::kStaticD1, track, 1);
  RolloutOptions ro;
  ro.duration = 0.5;
  const RolloutTape tape = Rollout(p, *track, MakeState(0, 0, 0, 0.2, 0, 0), ro);
  std::istringstream in(FormatRolloutCsv(tape, *track));
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "t,sigma,d,theta_e,v_y,psi_dot,delta,action,kappa,converged");
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  EXPECT_GE(rows, tape.steps());
}

}  // namespace
}  // namespace mpcil
