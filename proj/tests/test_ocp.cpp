#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "mpcil/integrity.hpp"
#include "mpcil/ocp.hpp"
#include "test_common.hpp"

namespace mpcil {
namespace {

using testing::Share;
using testing::Straight;

ThetaVector UnitD1() { return ThetaVector::D1(1, 1, 1, 0); }

// Equilibrium primal: centered, aligned, sigma advancing at v_x.
Eigen::VectorXd EquilibriumPrimal(const NlpInstance& nlp) {
  Eigen::VectorXd w = Eigen::VectorXd::Zero(nlp.num_primal());
  for (int k = 0; k <= nlp.horizon(); ++k) {
    w(NlpInstance::XIndex(k, kSigma)) = k * nlp.spec().vehicle.v_x * nlp.spec().dt;
  }
  return w;
}

TEST(Ocp, TranscriptionCounts) {
  const OcpSpec spec = MakeOcpSpec(Straight(), CostVariant::kD1Stage);
  const NlpInstance nlp = Transcribe(spec, VehicleState::Zero(), UnitD1());
  EXPECT_EQ(nlp.num_primal(), 6 * 21 + 20);
  EXPECT_EQ(nlp.num_equalities(), 6 * 21);
  EXPECT_EQ(nlp.num_theta(), 4);
  EXPECT_EQ(nlp.WithRelaxation(true).num_primal(), 146 + 20);
}

TEST(Ocp, D1ObjectiveVanishesAtOrigin) {
  const OcpSpec spec = MakeOcpSpec(Straight(), CostVariant::kD1Stage);
  const NlpInstance nlp = Transcribe(spec, VehicleState::Zero(), UnitD1());
  EXPECT_EQ(nlp.Objective(Eigen::VectorXd::Zero(nlp.num_primal())), 0.0);
  EXPECT_EQ(nlp.Objective(EquilibriumPrimal(nlp)), 0.0);
}

TEST(Ocp, D2TerminalTermVanishesAtTarget) {
  const OcpSpec spec = MakeOcpSpec(Straight(8.0), CostVariant::kD2Terminal);
  const NlpInstance nlp =
      Transcribe(spec, VehicleState::Zero(), ThetaVector::D2(1.3));
  Eigen::VectorXd w = Eigen::VectorXd::Zero(nlp.num_primal());
  w(NlpInstance::XIndex(20, kD)) = 1.3;
  EXPECT_EQ(nlp.Objective(w), 0.0);
  w(NlpInstance::XIndex(20, kD)) = 0.3;
  EXPECT_NEAR(nlp.Objective(w), 1.0, 1e-15);
}

TEST(Ocp, CenteredStartOnStraightStaysAtRest) {
  const OcpSpec spec = MakeOcpSpec(Straight(), CostVariant::kD1Stage);
  const MpcOutput out = MpcControl(spec, VehicleState::Zero(), UnitD1());
  EXPECT_TRUE(out.solution.converged);
  EXPECT_NEAR(out.action, 0.0, 1e-12);
  for (int k = 0; k <= 20; ++k) {
    const VehicleState x = out.solution.state(k);
    for (int j : {kVy, kYawRate, kD, kThetaE, kDelta}) EXPECT_NEAR(x(j), 0.0, 1e-12);
  }
}

TEST(Ocp, OffsetStartIsRegulated) {
  const OcpSpec spec = MakeOcpSpec(Straight(), CostVariant::kD1Stage);
  const VehicleState s0 = MakeState(0, 0, 0, 1.0, 0, 0);
  const MpcOutput out = MpcControl(spec, s0, UnitD1());
  ASSERT_TRUE(out.solution.converged);
  EXPECT_LT(std::abs(out.solution.state(20)(kD)), 0.25 * 1.0);
  // Replay the solved controls through the model independently.
  VehicleState x = s0;
  for (int k = 0; k < 20; ++k) {
    x = StepRk4(x, out.solution.control(k), spec.vehicle, 0.0, spec.dt);
    EXPECT_LT((x - out.solution.state(k + 1)).norm(), 1e-6);
  }
  EXPECT_LT(std::abs(x(kD)), 0.25);
}

TEST(Ocp, LaneBoundBindsNearEdgeBeforeCurve) {
  // Curve to -d right after the start, vehicle at +0.9 w/2 drifting outward.
  auto track = Share(TrackSpec({{30, 0.0}, {200, -0.02}, {400, 0.0}}, 4.5));
  const OcpSpec spec = MakeOcpSpec(track, CostVariant::kD1Stage);
  const double hw = track->half_width();
  const VehicleState s0 = MakeState(0, 0, 20, 0.9 * hw, 0.06, 0.0);
  const MpcOutput out = MpcControl(spec, s0, UnitD1());
  ASSERT_TRUE(out.solution.converged);
  ASSERT_FALSE(out.solution.relaxed);
  bool lane_active = false;
  for (std::size_t i = 0; i < out.nlp.inequalities().size(); ++i) {
    const int kind = out.nlp.inequalities()[i].kind;
    if ((kind == 0 || kind == 1) && out.solution.mu(i) > 0) lane_active = true;
  }
  EXPECT_TRUE(lane_active);
  for (int k = 0; k <= 20; ++k) {
    EXPECT_LE(std::abs(out.solution.state(k)(kD)), hw + 1e-8);
  }
}

TEST(Ocp, KktResidualExamples) {
  const OcpSpec spec = MakeOcpSpec(Share(DefaultTrack()), CostVariant::kD1Stage);
  const VehicleState s0 = MakeState(0.1, 0.02, 100, 0.5, 0.02, 0.01);
  const NlpInstance nlp = Transcribe(spec, s0, UnitD1());
  const PrimalDualSolution sol = Solve(nlp);
  ASSERT_TRUE(sol.converged);
  EXPECT_LE(KktResidual(sol, nlp), 1e-6);
  PrimalDualSolution bad = sol;
  bad.primal(NlpInstance::UIndex(5)) += 0.1;
  EXPECT_GT(KktResidual(bad, nlp), 1e-3);

  const OcpSpec flat = MakeOcpSpec(Straight(), CostVariant::kD1Stage);
  const NlpInstance trivial = Transcribe(flat, VehicleState::Zero(), UnitD1());
  PrimalDualSolution z;
  z.horizon = 20;
  z.primal = EquilibriumPrimal(trivial);
  z.lambda = Eigen::VectorXd::Zero(trivial.num_equalities());
  z.mu = Eigen::VectorXd::Zero(trivial.num_inequalities());
  EXPECT_LE(KktResidual(z, trivial), 1e-12);
}

TEST(Ocp, EquilibriumActionIsZero) {
  const OcpSpec spec = MakeOcpSpec(Straight(), CostVariant::kD1Stage);
  EXPECT_EQ(MpcControl(spec, VehicleState::Zero(), UnitD1()).action, 0.0);
}

TEST(Ocp, RandomInstancesRespectBoundsAndComplementarity) {
  std::mt19937_64 rng(21);
  auto track = Share(DefaultTrack());
  for (int i = 0; i < 20; ++i) {
    RandomInstance inst = DrawInstance(
        rng, i % 2 ? CostVariant::kD1Stage : CostVariant::kD2Terminal, track,
        i % 4 == 0);
    inst.spec.solver = TightSolverOptions();
    const MpcOutput out = MpcControl(inst.spec, inst.s0, inst.theta);
    // Relaxed instances carry the 1e4 slack cost, whose roundoff floor sits
    // near the tight tolerance.
    ASSERT_TRUE(out.solution.converged ||
                (out.solution.relaxed && out.solution.kkt_residual <= 1e-9))
        << i;
    const KktResidualParts parts = KktResidualBreakdown(out.solution, out.nlp);
    EXPECT_LE(parts.inequality, 1e-8);
    EXPECT_LE(parts.complementarity, 1e-8);
    EXPECT_LE(parts.dual_feasibility, 0.0);
    EXPECT_LE(std::abs(out.action), inst.spec.bounds.delta_rate_max + 1e-8);
    for (int k = 1; k <= 20; ++k) {
      EXPECT_LE(std::abs(out.solution.state(k)(kDelta)),
                inst.spec.bounds.delta_max + 1e-8);
    }
  }
}

TEST(Ocp, MeritDecreasesMonotonically) {
  std::mt19937_64 rng(22);
  auto track = Share(DefaultTrack());
  for (int i = 0; i < 20; ++i) {
    const RandomInstance inst = DrawInstance(rng, CostVariant::kD1Stage, track);
    const PrimalDualSolution sol =
        Solve(Transcribe(inst.spec, inst.s0, inst.theta));
    const auto& m = sol.diagnostics.merit_history;
    for (std::size_t k = 1; k < m.size(); ++k) {
      EXPECT_LE(m[k], m[k - 1] + 1e-10 * std::abs(m[k - 1])) << i << ":" << k;
    }
  }
}

TEST(Ocp, WarmResolveTakesAtMostTwoIterations) {
  const OcpSpec spec = MakeOcpSpec(Share(DefaultTrack()), CostVariant::kD1Stage);
  const NlpInstance nlp =
      Transcribe(spec, MakeState(0.1, 0.0, 300, -0.8, 0.02, 0.0), UnitD1());
  const PrimalDualSolution cold = Solve(nlp);
  ASSERT_TRUE(cold.converged);
  const PrimalDualSolution warm = Solve(nlp, &cold);
  EXPECT_TRUE(warm.converged);
  EXPECT_LE(warm.diagnostics.iterations, 2);
}

TEST(Ocp, MirrorSymmetry) {
  std::mt19937_64 rng(23);
  auto track = Share(DefaultTrack());
  auto mirrored = Share(track->Mirrored());
  for (int i = 0; i < 5; ++i) {
    RandomInstance inst = DrawInstance(rng, CostVariant::kD1Stage, track);
    inst.spec.solver = TightSolverOptions();
    OcpSpec mspec = inst.spec;
    mspec.track = mirrored;
    VehicleState ms = -inst.s0;
    ms(kSigma) = inst.s0(kSigma);
    ThetaVector mt = inst.theta;
    mt.values(3) = -mt.values(3);
    const double a = MpcControl(inst.spec, inst.s0, inst.theta).action;
    const double b = MpcControl(mspec, ms, mt).action;
    EXPECT_NEAR(a, -b, 1e-6);
  }
}

// D2 equals D1 with no stage offset weight and a unit terminal weight.
TEST(Ocp, D2IsTerminalOnlyD1) {
  auto track = Share(DefaultTrack(TrackPreset::kD2));
  OcpSpec d2 = MakeOcpSpec(track, CostVariant::kD2Terminal);
  OcpSpec d1 = MakeOcpSpec(track, CostVariant::kD1Stage);
  d1.d1_terminal_weight = 1.0;
  d1.solver = d2.solver = TightSolverOptions();
  std::mt19937_64 rng(24);
  for (int i = 0; i < 5; ++i) {
    const double dbar = testing::Uniform(rng, -2, 2);
    const VehicleState s0 = MakeState(0, 0, testing::Uniform(rng, 0, 1200),
                                      testing::Uniform(rng, -2, 2), 0, 0);
    const double a = MpcControl(d2, s0, ThetaVector::D2(dbar)).action;
    const double b = MpcControl(d1, s0, ThetaVector::D1(0, 1, 1, dbar)).action;
    EXPECT_NEAR(a, b, 1e-8);
  }
}

TEST(Ocp, ShiftWarmStartMovesOneStage) {
  const OcpSpec spec = MakeOcpSpec(Share(DefaultTrack()), CostVariant::kD1Stage);
  const NlpInstance nlp =
      Transcribe(spec, MakeState(0, 0, 50, 0.5, 0, 0), UnitD1());
  const PrimalDualSolution sol = Solve(nlp);
  const PrimalDualSolution s = ShiftWarmStart(sol, nlp);
  for (int k = 0; k < 20; ++k) EXPECT_EQ(s.state(k), sol.state(k + 1));
  EXPECT_EQ(s.state(20), sol.state(20));
  EXPECT_EQ(s.control(19), sol.control(19));
}

TEST(Ocp, InvalidSpecsAreRejected) {
  OcpSpec spec = MakeOcpSpec(Straight(), CostVariant::kD1Stage);
  spec.horizon = 1;
  EXPECT_THROW(spec.Validate(), InvalidSpecError);
  spec = MakeOcpSpec(Straight(), CostVariant::kD1Stage);
  EXPECT_THROW(Transcribe(spec, VehicleState::Zero(), ThetaVector::D2(0)),
               InvalidSpecError);
  spec.track = nullptr;
  EXPECT_THROW(spec.Validate(), InvalidSpecError);
}

TEST(Ocp, MpcControlIsDeterministic) {
  const OcpSpec spec = MakeOcpSpec(Share(DefaultTrack()), CostVariant::kD1Stage);
  const VehicleState s0 = MakeState(0.1, 0.05, 640, -1.0, 0.05, 0.01);
  const double a = MpcControl(spec, s0, UnitD1()).action;
  const double b = MpcControl(spec, s0, UnitD1()).action;
  EXPECT_EQ(a, b);
}

}  // namespace
}  // namespace mpcil
