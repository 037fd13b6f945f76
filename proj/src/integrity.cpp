#include "mpcil/integrity.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "mpcil/experiments.hpp"
#include "mpcil/sensitivity.hpp"
#include "mpcil/trainer.hpp"
#include "text_io.hpp"

namespace mpcil {
namespace {

double Uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

CheckResult MakeCheck(std::string name, double value, double threshold,
                      bool passed, std::string detail = {}) {
  CheckResult c;
  c.name = std::move(name);
  c.value = value;
  c.threshold = threshold;
  c.passed = passed;
  c.detail = std::move(detail);
  return c;
}

double SolveU0(const NlpInstance& nlp, const PrimalDualSolution* warm,
               PrimalDualSolution* out = nullptr) {
  PrimalDualSolution sol = Solve(nlp, warm);
  if (out) *out = sol;
  return sol.first_control();
}

VehicleState MirrorState(const VehicleState& s) {
  VehicleState m = -s;
  m(kSigma) = s(kSigma);
  return m;
}

}  // namespace

bool IntegrityReport::AllPassed() const {
  return std::all_of(checks.begin(), checks.end(),
                     [](const CheckResult& c) { return c.passed; });
}

std::string IntegrityReport::Format() const {
  std::ostringstream os;
  for (const auto& c : checks) {
    os << (c.passed ? "PASS " : "FAIL ") << c.name
       << " value=" << text::FormatDouble(c.value)
       << " bound=" << text::FormatDouble(c.threshold);
    if (!c.detail.empty()) os << " (" << c.detail << ')';
    os << '\n';
  }
  return os.str();
}

double RelativeError(const Eigen::VectorXd& a, const Eigen::VectorXd& b,
                     double floor) {
  const double scale = std::max({a.norm(), b.norm(), floor});
  return (a - b).norm() / scale;
}

SolverOptions TightSolverOptions() {
  SolverOptions o;
  o.tolerance = 1e-11;
  o.max_iterations = 100;
  o.hessian = HessianMode::kExact;
  return o;
}

RandomInstance DrawInstance(std::mt19937_64& rng, CostVariant variant,
                            std::shared_ptr<const TrackSpec> track,
                            bool near_boundary) {
  RandomInstance inst;
  const double hw = track->half_width();
  inst.spec = MakeOcpSpec(track, variant);
  const double sigma = Uniform(rng, 0.0, track->total_length());
  if (near_boundary) {
    const double side = Uniform(rng, 0.0, 1.0) < 0.5 ? -1.0 : 1.0;
    inst.s0 = MakeState(Uniform(rng, -0.05, 0.05), Uniform(rng, -0.05, 0.05),
                        sigma, side * Uniform(rng, 0.85, 0.95) * hw,
                        side * Uniform(rng, 0.02, 0.09),
                        side * Uniform(rng, 0.0, 0.02));
  } else {
    inst.s0 = MakeState(Uniform(rng, -0.3, 0.3), Uniform(rng, -0.1, 0.1), sigma,
                        Uniform(rng, -0.9, 0.9) * hw, Uniform(rng, -0.1, 0.1),
                        Uniform(rng, -0.05, 0.05));
  }
  const double side = near_boundary ? (inst.s0(kD) > 0 ? 1.0 : -1.0) : 0.0;
  const double d_bar = near_boundary ? side * Uniform(rng, 0.5, 0.95) * hw
                                     : Uniform(rng, -0.9, 0.9) * hw;
  if (variant == CostVariant::kD1Stage) {
    inst.theta = ThetaVector::D1(Uniform(rng, 0.2, 4.0), Uniform(rng, 0.2, 4.0),
                                 Uniform(rng, 0.2, 4.0), d_bar);
  } else {
    inst.theta = ThetaVector::D2(d_bar);
  }
  return inst;
}

SensitivityFdResult CheckSensitivityFd(const RandomInstance& inst, double h) {
  SensitivityFdResult r;
  OcpSpec spec = inst.spec;
  spec.solver = TightSolverOptions();
  spec.solver.allow_relaxation = false;
  const NlpInstance nlp = Transcribe(spec, inst.s0, inst.theta);
  PrimalDualSolution base;
  try {
    base = Solve(nlp);
  } catch (const std::exception&) {
    return r;
  }
  if (!base.converged || base.relaxed) return r;
  for (std::size_t i = 0; i < nlp.inequalities().size(); ++i) {
    const int kind = nlp.inequalities()[i].kind;
    if ((kind == 0 || kind == 1) && base.active_set[i]) r.lane_active = true;
  }

  PolicyJacobians pj;
  try {
    pj = ComputePolicyJacobians(base, nlp, {});
  } catch (const SingularKktError&) {
    return r;
  }
  r.condition = pj.condition;

  bool converged = true;
  bool stable = true;
  auto perturbed = [&](const NlpInstance& p) {
    PrimalDualSolution s;
    try {
      s = Solve(p, &base);
    } catch (const std::exception&) {
      converged = false;
      return 0.0;
    }
    converged = converged && s.converged && !s.relaxed;
    stable = stable && s.active_set == base.active_set;
    return s.first_control();
  };

  const int nt = nlp.num_theta();
  Eigen::VectorXd fd_theta(nt);
  for (int j = 0; j < nt; ++j) {
    ThetaVector tp = inst.theta, tm = inst.theta;
    tp.values(j) += h;
    tm.values(j) -= h;
    fd_theta(j) = (perturbed(nlp.WithTheta(tp)) - perturbed(nlp.WithTheta(tm))) /
                  (2.0 * h);
  }
  Eigen::VectorXd fd_state(kNx);
  for (int j = 0; j < kNx; ++j) {
    VehicleState sp = inst.s0, sm = inst.s0;
    sp(j) += h;
    sm(j) -= h;
    fd_state(j) = (perturbed(nlp.WithInitialState(sp)) -
                   perturbed(nlp.WithInitialState(sm))) /
                  (2.0 * h);
  }
  r.converged = converged;
  r.active_set_stable = stable;
  r.theta_error = RelativeError(fd_theta, pj.du0_dtheta);
  r.state_error = RelativeError(fd_state, Eigen::VectorXd(pj.du0_ds));
  return r;
}

BpttCase MakeBpttCase(PolicyKind kind, std::uint64_t seed, double horizon) {
  std::mt19937_64 rng(seed);
  BpttCase c;
  c.track = std::make_shared<const TrackSpec>(DefaultTrack(
      kind == PolicyKind::kStaticD1 ? TrackPreset::kD1 : TrackPreset::kD2));
  const double hw = c.track->half_width();
  c.s0 = MakeState(Uniform(rng, -0.1, 0.1), Uniform(rng, -0.05, 0.05),
                   Uniform(rng, 0.0, c.track->total_length()),
                   Uniform(rng, -0.5, 0.5) * hw, Uniform(rng, -0.03, 0.03),
                   Uniform(rng, -0.02, 0.02));
  c.policy = InitialPolicy(kind, c.track, seed);
  if (kind == PolicyKind::kStaticD1) {
    StaticRaw raw = InitialStaticRaw();
    for (int i = 0; i < 4; ++i) raw(i) += Uniform(rng, -0.5, 0.5);
    c.policy.set_raw(raw);
  }
  if (kind != PolicyKind::kBaseline) {
    c.policy.mutable_ocp().solver = TightSolverOptions();
  }
  OcpSpec expert_spec = MakeOcpSpec(c.track, CostVariant::kD1Stage);
  expert_spec.solver = TightSolverOptions();
  StaticRaw expert_raw = InitialStaticRaw();
  expert_raw(3) = std::atanh(Uniform(rng, -0.5, 0.5));
  const Policy expert = Policy::StaticD1(expert_spec, expert_raw);
  RolloutOptions ro;
  ro.duration = horizon;
  const RolloutTape tape = Rollout(expert, *c.track, c.s0, ro);
  c.demo.dt = tape.dt;
  c.demo.states = tape.states;
  c.demo.track = c.track->name();
  c.demo.lane_width = c.track->lane_width();
  return c;
}

BpttFdResult CheckBpttFd(const BpttCase& c, double horizon, double t_s,
                         std::uint64_t seed) {
  BpttFdResult r;
  RolloutOptions ro;
  ro.duration = horizon;
  ro.record_grads = true;
  const int start = static_cast<int>(std::lround(t_s / ro.dt));
  ro.grad_start_step = start;
  std::vector<int> base_sizes;
  auto sizes = [](const RolloutTape& t) {
    std::vector<int> out;
    for (const auto& d : t.diagnostics) out.push_back(d.active_set_size);
    return out;
  };
  RolloutTape tape;
  try {
    tape = Rollout(c.policy, *c.track, c.s0, ro);
  } catch (const RolloutAbortedError&) {
    return r;
  }
  if (tape.degraded) return r;
  base_sizes = sizes(tape);
  const BpttResult an = BpttGradient(tape, c.demo, start);

  std::mt19937_64 rng(seed);
  const int n = c.policy.num_params();
  std::vector<Eigen::VectorXd> dirs;
  if (c.policy.kind() == PolicyKind::kStaticD1) {
    for (int i = 0; i < n; ++i) dirs.push_back(Eigen::VectorXd::Unit(n, i));
  } else {
    for (int k = 0; k < 3; ++k) {
      Eigen::VectorXd d(n);
      for (int i = 0; i < n; ++i) d(i) = Uniform(rng, -1.0, 1.0);
      dirs.push_back(d / d.norm());
    }
  }
  const double h = c.policy.kind() == PolicyKind::kStaticD1 ? 1e-5 : 1e-6;
  RolloutOptions plain = ro;
  plain.record_grads = false;
  bool ok = true;
  bool stable = true;
  auto loss_at = [&](const Eigen::VectorXd& raw) {
    Policy p = c.policy;
    p.set_raw(raw);
    try {
      const RolloutTape t = Rollout(p, *c.track, c.s0, plain);
      ok = ok && !t.degraded;
      stable = stable && sizes(t) == base_sizes;
      return ScoredLoss(t, c.demo, start);
    } catch (const RolloutAbortedError&) {
      ok = false;
      return 0.0;
    }
  };
  Eigen::VectorXd fd(dirs.size()), proj(dirs.size());
  const Eigen::VectorXd raw = c.policy.raw();
  for (std::size_t k = 0; k < dirs.size(); ++k) {
    fd(k) = (loss_at(raw + h * dirs[k]) - loss_at(raw - h * dirs[k])) / (2 * h);
    proj(k) = an.grad.dot(dirs[k]);
  }
  r.ok = ok;
  r.stable = stable;
  r.directions = static_cast<int>(dirs.size());
  r.rel_error = RelativeError(fd, proj);
  return r;
}

CheckResult CheckRk4Order() {
  // Global error at T = 1 s against a dt/64 reference, dt = 0.1 and 0.05.
  const VehicleParams p;
  const double kappa = 0.01;
  const VehicleState x0 = MakeState(0.2, 0.05, 0.0, 0.5, 0.05, 0.02);
  auto run = [&](double dt) {
    VehicleState x = x0;
    const int n = static_cast<int>(std::lround(1.0 / dt));
    for (int i = 0; i < n; ++i) x = StepRk4(x, 0.2, p, kappa, dt);
    return x;
  };
  const double dt = kDefaultDt;
  const VehicleState ref = run(dt / 64.0);
  const double e1 = (run(dt) - ref).norm();
  const double e2 = (run(dt / 2.0) - ref).norm();
  const double ratio = e1 / e2;
  return MakeCheck("rk4_order_ratio", ratio, 3.0, std::abs(ratio - 16.0) <= 3.0,
                   "expected 16 +- 3");
}

CheckResult CheckPlantJacobian(std::uint64_t seed, int samples) {
  std::mt19937_64 rng(seed);
  const VehicleParams p;
  const TrackSpec track = DefaultTrack(TrackPreset::kD1);
  const double h = 1e-6;
  double worst = 0.0;
  for (int n = 0; n < samples; ++n) {
    // Mid-segment arc so that no RK stage crosses a curvature jump.
    const auto& segs = track.segments();
    const int si = static_cast<int>(Uniform(rng, 0.0, segs.size() - 1e-9));
    double start = 0.0;
    for (int i = 0; i < si; ++i) start += segs[i].length;
    const double sigma = start + 0.5 * segs[si].length;
    const VehicleState x =
        MakeState(Uniform(rng, -0.5, 0.5), Uniform(rng, -0.3, 0.3), sigma,
                  Uniform(rng, -2.0, 2.0), Uniform(rng, -0.2, 0.2),
                  Uniform(rng, -0.1, 0.1));
    const double u = Uniform(rng, -0.8, 0.8);
    const StepJacobians j = StepRk4Jacobians(x, u, p, track);
    Eigen::Matrix<double, kNx, kNx + 1> fd, an;
    an << j.dx, j.du;
    for (int c = 0; c <= kNx; ++c) {
      VehicleState xp = x, xm = x;
      double up = u, um = u;
      if (c < kNx) {
        xp(c) += h;
        xm(c) -= h;
      } else {
        up += h;
        um -= h;
      }
      fd.col(c) = (StepRk4(xp, up, p, track) - StepRk4(xm, um, p, track)) / (2 * h);
    }
    worst = std::max(worst, (fd - an).cwiseAbs().maxCoeff() /
                                std::max(1.0, an.cwiseAbs().maxCoeff()));
  }
  return MakeCheck("plant_jacobian_fd", worst, 1e-6, worst <= 1e-6,
                   std::to_string(samples) + " states");
}

CheckResult CheckProjectionGradient(std::uint64_t seed, int samples) {
  std::mt19937_64 rng(seed);
  const double h = 1e-5;
  const double width = 4.5;
  double worst = 0.0;
  for (int n = 0; n < samples; ++n) {
    StaticRaw raw;
    for (int i = 0; i < 4; ++i) raw(i) = Uniform(rng, -3.0, 3.0);
    const StaticProjection proj = ProjectStatic(raw, width);
    for (int i = 0; i < 4; ++i) {
      StaticRaw rp = raw, rm = raw;
      rp(i) += h;
      rm(i) -= h;
      const double fd = (ProjectStatic(rp, width).theta.values(i) -
                         ProjectStatic(rm, width).theta.values(i)) /
                        (2 * h);
      worst = std::max(worst, std::abs(fd - proj.jacobian(i)));
    }
  }
  return MakeCheck("projection_gradient_fd", worst, 1e-8, worst <= 1e-8);
}

CheckResult CheckMirrorSymmetry(std::uint64_t seed, int samples) {
  std::mt19937_64 rng(seed);
  auto track = std::make_shared<const TrackSpec>(DefaultTrack(TrackPreset::kD1));
  auto mirrored = std::make_shared<const TrackSpec>(track->Mirrored());
  double worst = 0.0;
  int failed = 0;
  for (int n = 0; n < samples; ++n) {
    const CostVariant v = n % 2 ? CostVariant::kD2Terminal : CostVariant::kD1Stage;
    RandomInstance a = DrawInstance(rng, v, track);
    a.spec.solver = TightSolverOptions();
    OcpSpec mspec = a.spec;
    mspec.track = mirrored;
    ThetaVector mtheta = a.theta;
    mtheta.values(mtheta.size() - 1) *= -1.0;
    try {
      const MpcOutput ua = MpcControl(a.spec, a.s0, a.theta);
      const MpcOutput ub = MpcControl(mspec, MirrorState(a.s0), mtheta);
      if (!ua.solution.converged || !ub.solution.converged) ++failed;
      worst = std::max(worst, std::abs(ua.action + ub.action));
    } catch (const std::exception&) {
      ++failed;
    }
  }
  return MakeCheck("mirror_symmetry_u0", worst, 1e-6, worst <= 1e-6 && failed == 0,
                   std::to_string(failed) + " solver failures");
}

CheckResult CheckCostScaling(std::uint64_t seed, int samples) {
  std::mt19937_64 rng(seed);
  auto track = std::make_shared<const TrackSpec>(DefaultTrack(TrackPreset::kD1));
  double worst = 0.0;
  int failed = 0;
  for (int n = 0; n < samples; ++n) {
    const CostVariant v = n % 2 ? CostVariant::kD2Terminal : CostVariant::kD1Stage;
    RandomInstance a = DrawInstance(rng, v, track);
    a.spec.solver = TightSolverOptions();
    a.spec.solver.tolerance = 1e-12;
    OcpSpec scaled = a.spec;
    scaled.cost_scale = Uniform(rng, 0.1, 10.0);
    try {
      const NlpInstance na = Transcribe(a.spec, a.s0, a.theta);
      const NlpInstance nb(scaled, a.s0, a.theta, na.kappa(), false);
      PrimalDualSolution sa, sb;
      const double ua = SolveU0(na, nullptr, &sa);
      const double ub = SolveU0(nb, nullptr, &sb);
      if (!sa.converged || !sb.converged || sa.relaxed || sb.relaxed) ++failed;
      worst = std::max(worst, std::abs(ua - ub));
    } catch (const std::exception&) {
      ++failed;
    }
  }
  return MakeCheck("cost_scaling_u0", worst, 1e-8, worst <= 1e-8 && failed == 0,
                   std::to_string(failed) + " solver failures");
}

CheckResult CheckMlpGradient(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  double worst = 0.0;
  const double h = 1e-6;
  for (int n = 0; n < 10; ++n) {
    Mlp net = n % 2 ? MakeBaselineNetwork(seed + n) : MakeDbarNetwork(seed + n);
    Eigen::VectorXd x(net.input_size());
    for (int i = 0; i < x.size(); ++i) x(i) = Uniform(rng, -1.5, 1.5);
    Mlp::Tape tape;
    net.Forward(x, &tape);
    const Mlp::Gradient g = net.Backward(tape, 1.0);
    Eigen::VectorXd dir(net.num_params());
    for (int i = 0; i < dir.size(); ++i) dir(i) = Uniform(rng, -1.0, 1.0);
    const Eigen::VectorXd theta = net.params();
    net.params() = theta + h * dir;
    const double fp = net.Forward(x);
    net.params() = theta - h * dir;
    const double fm = net.Forward(x);
    net.params() = theta;
    Eigen::VectorXd fd(1), an(1);
    fd(0) = (fp - fm) / (2 * h);
    an(0) = g.params.dot(dir);
    worst = std::max(worst, RelativeError(fd, an));
    Eigen::VectorXd fd_in(x.size());
    for (int i = 0; i < x.size(); ++i) {
      Eigen::VectorXd xp = x, xm = x;
      xp(i) += h;
      xm(i) -= h;
      fd_in(i) = (net.Forward(xp) - net.Forward(xm)) / (2 * h);
    }
    worst = std::max(worst, RelativeError(fd_in, g.input));
  }
  return MakeCheck("mlp_gradient_fd", worst, 1e-6, worst <= 1e-6,
                   "directional in parameters, full in inputs");
}

CheckResult CheckBaselineGradient(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const TrackSpec track = DefaultTrack(TrackPreset::kD2);
  Policy policy = Policy::Baseline(MakeBaselineNetwork(seed), track, 0.8);
  const double h = 1e-6;
  double worst = 0.0;
  for (int n = 0; n < 10; ++n) {
    const VehicleState s = MakeState(
        Uniform(rng, -0.3, 0.3), Uniform(rng, -0.1, 0.1),
        Uniform(rng, 10.0, track.total_length() - 10.0),
        Uniform(rng, -3.0, 3.0), Uniform(rng, -0.1, 0.1), Uniform(rng, -0.05, 0.05));
    const CurvaturePreview chi = track.Preview(s(kSigma));
    const PolicyStep step = policy.Act(s, chi, nullptr, true);
    Eigen::VectorXd dir(policy.num_params());
    for (int i = 0; i < dir.size(); ++i) dir(i) = Uniform(rng, -1.0, 1.0);
    const Eigen::VectorXd raw = policy.raw();
    Policy pp = policy, pm = policy;
    pp.set_raw(raw + h * dir);
    pm.set_raw(raw - h * dir);
    Eigen::VectorXd fd(1), an(1);
    fd(0) = (pp.Act(s, chi, nullptr, false).action -
             pm.Act(s, chi, nullptr, false).action) /
            (2 * h);
    an(0) = step.da_draw.dot(dir);
    worst = std::max(worst, RelativeError(fd, an));
    Eigen::VectorXd fd_s(kNx);
    for (int i = 0; i < kNx; ++i) {
      VehicleState sp = s, sm = s;
      sp(i) += h;
      sm(i) -= h;
      fd_s(i) = (policy.Act(sp, chi, nullptr, false).action -
                 policy.Act(sm, chi, nullptr, false).action) /
                (2 * h);
    }
    worst = std::max(worst, RelativeError(fd_s, Eigen::VectorXd(step.da_ds)));
  }
  return MakeCheck("baseline_gradient_fd", worst, 1e-6, worst <= 1e-6);
}

CheckResult CheckSensitivitySuite(std::uint64_t seed, int samples) {
  std::mt19937_64 rng(seed);
  auto track = std::make_shared<const TrackSpec>(DefaultTrack(TrackPreset::kD1));
  double worst = 0.0;
  int used = 0;
  for (int n = 0; n < samples; ++n) {
    const CostVariant v = n % 2 ? CostVariant::kD2Terminal : CostVariant::kD1Stage;
    const RandomInstance inst = DrawInstance(rng, v, track, n % 4 >= 2);
    const SensitivityFdResult r = CheckSensitivityFd(inst);
    if (!r.converged || !r.active_set_stable) continue;
    ++used;
    worst = std::max({worst, r.theta_error, r.state_error});
  }
  return MakeCheck("sensitivity_fd", worst, 1e-4, worst <= 1e-4 && used > 0,
                   std::to_string(used) + " instances with a stable active set");
}

CheckResult CheckBpttSuite(std::uint64_t seed) {
  double worst = 0.0;
  int used = 0;
  for (PolicyKind kind :
       {PolicyKind::kStaticD1, PolicyKind::kMlpD2, PolicyKind::kBaseline}) {
    const BpttCase c = MakeBpttCase(kind, seed);
    const BpttFdResult r = CheckBpttFd(c, 1.0, 0.0, seed);
    if (!r.ok || !r.stable) continue;
    ++used;
    worst = std::max(worst, r.rel_error);
  }
  return MakeCheck("bptt_gradient_fd", worst, 1e-3, worst <= 1e-3 && used > 0,
                   std::to_string(used) + " of 3 parameterizations with stable active sets");
}

IntegrityReport RunIntegritySuite(std::uint64_t seed) {
  IntegrityReport r;
  r.checks.push_back(CheckRk4Order());
  r.checks.push_back(CheckPlantJacobian(seed));
  r.checks.push_back(CheckProjectionGradient(seed));
  r.checks.push_back(CheckMirrorSymmetry(seed));
  r.checks.push_back(CheckCostScaling(seed));
  r.checks.push_back(CheckMlpGradient(seed));
  r.checks.push_back(CheckBaselineGradient(seed));
  r.checks.push_back(CheckSensitivitySuite(seed));
  r.checks.push_back(CheckBpttSuite(seed));
  return r;
}

}  // namespace mpcil
