// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on failure.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "mpcil/closed_loop.hpp"
#include "mpcil/datasets.hpp"
#include "mpcil/errors.hpp"
#include "mpcil/experiments.hpp"
#include "mpcil/integrity.hpp"
#include "mpcil/metrics.hpp"
#include "mpcil/ocp.hpp"
#include "mpcil/policy.hpp"
#include "mpcil/trainer.hpp"

namespace mpcil {
namespace {

int failures = 0;

void Report(int id, const char* name, bool pass, const std::string& detail) {
  std::printf("%s [%d] %s: %s\n", pass ? "PASS" : "FAIL", id, name, detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

std::string Fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double Seconds(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Safety bookkeeping for every MPC evaluation rollout in the suite.
struct SafetyTally {
  int rollouts = 0;
  int violations = 0;
  int skipped = 0;  // rollouts with non-converged steps or aborted

  void Add(const EvalReport& r) {
    for (const auto& t : r.per_trajectory) {
      if (t.aborted || t.nonconverged_steps > 0) {
        ++skipped;
        continue;
      }
      ++rollouts;
      violations += t.safety_violations;
    }
  }
};

SafetyTally mpc_safety;

EvalReport Evaluate(const Policy& p, const std::vector<DemoTrajectory>& windows,
                    const TrackSpec& track, double horizon, double t_s) {
  EvalOptions opts;
  opts.horizon = horizon;
  opts.t_s = t_s;
  EvalReport r = EvaluatePolicy(p, windows, track, opts, false);
  if (p.kind() != PolicyKind::kBaseline) mpc_safety.Add(r);
  return r;
}

void SolveQuality() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(101);
  auto d1 = std::make_shared<const TrackSpec>(DefaultTrack(TrackPreset::kD1));
  auto d2 = std::make_shared<const TrackSpec>(DefaultTrack(TrackPreset::kD2));
  const int n = 200;
  int ok = 0, relaxed = 0, max_iter = 0;
  double worst_kkt = 0.0, max_ms = 0.0, sum_ms = 0.0;
  for (int i = 0; i < n; ++i) {
    const bool d2v = i % 2;
    const RandomInstance inst =
        DrawInstance(rng, d2v ? CostVariant::kD2Terminal : CostVariant::kD1Stage,
                     d2v ? d2 : d1, i % 4 == 3);
    const NlpInstance nlp = Transcribe(inst.spec, inst.s0, inst.theta);
    PrimalDualSolution z;
    try {
      z = Solve(nlp);
    } catch (const std::exception&) {
      continue;
    }
    const auto& dg = z.diagnostics;
    relaxed += z.relaxed;
    max_ms = std::max(max_ms, dg.solve_time_ms);
    sum_ms += dg.solve_time_ms;
    if (z.converged && z.kkt_residual <= 1e-6 && dg.iterations <= 50) {
      ++ok;
      worst_kkt = std::max(worst_kkt, z.kkt_residual);
      max_iter = std::max(max_iter, dg.iterations);
    }
  }
  const double rate = static_cast<double>(ok) / n;
  Report(1, "kkt_solve_quality", rate >= 0.99 && max_ms <= 100.0,
         Fmt("%d/%d converged (%.1f%%), worst kkt %.2e, max iters %d, relaxed %d, "
             "cold solve mean %.2f ms max %.2f ms [%.1f s]",
             ok, n, 100.0 * rate, worst_kkt, max_iter, relaxed, sum_ms / n, max_ms,
             Seconds(t0)));
}

void SensitivityCorrectness() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(202);
  auto d1 = std::make_shared<const TrackSpec>(DefaultTrack(TrackPreset::kD1));
  auto d2 = std::make_shared<const TrackSpec>(DefaultTrack(TrackPreset::kD2));
  int stable = 0, lane = 0, draws = 0, per_variant[2] = {0, 0};
  double worst_theta = 0.0, worst_state = 0.0;
  while ((stable < 100 || lane < 20) && draws < 600) {
    const int v = draws % 2;
    const bool near = (draws / 2) % 2;
    ++draws;
    const RandomInstance inst =
        DrawInstance(rng, v ? CostVariant::kD2Terminal : CostVariant::kD1Stage,
                     v ? d2 : d1, near);
    SensitivityFdResult r;
    try {
      r = CheckSensitivityFd(inst);
    } catch (const std::exception&) {
      continue;
    }
    if (!r.converged || !r.active_set_stable) continue;
    ++stable;
    ++per_variant[v];
    lane += r.lane_active;
    worst_theta = std::max(worst_theta, r.theta_error);
    worst_state = std::max(worst_state, r.state_error);
  }
  const bool pass = stable >= 100 && lane >= 20 && per_variant[0] > 0 &&
                    per_variant[1] > 0 && worst_theta <= 1e-4 && worst_state <= 1e-4;
  Report(2, "sensitivity_fd", pass,
         Fmt("%d stable of %d drawn (D1 %d, D2 %d, lane-active %d), "
             "worst theta err %.2e, worst state err %.2e [%.1f s]",
             stable, draws, per_variant[0], per_variant[1], lane, worst_theta,
             worst_state, Seconds(t0)));
}

void BpttCorrectness() {
  const auto t0 = std::chrono::steady_clock::now();
  const PolicyKind kinds[] = {PolicyKind::kStaticD1, PolicyKind::kMlpD2,
                              PolicyKind::kBaseline};
  const char* names[] = {"static", "mlp-d2", "baseline"};
  bool pass = true;
  std::string detail;
  for (int k = 0; k < 3; ++k) {
    double worst = 0.0;
    int within = 0, unstable = 0;
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
      const BpttCase c = MakeBpttCase(kinds[k], 1000 + seed);
      const BpttFdResult r = CheckBpttFd(c, 1.0, 0.0, 1000 + seed);
      unstable += !(r.ok && r.stable);
      worst = std::max(worst, r.rel_error);
      within += r.ok && r.rel_error <= 1e-3;
    }
    pass = pass && within == 10;
    detail += Fmt("%s %d/10 worst %.2e (active-set changes %d); ", names[k], within,
                  worst, unstable);
  }
  Report(3, "bptt_fd", pass, detail + Fmt("[%.1f s]", Seconds(t0)));
}

// D1 recovery on four disjoint noise-free two-lap datasets.
void ParameterRecovery() {
  const auto t0 = std::chrono::steady_clock::now();
  auto track = std::make_shared<const TrackSpec>(DefaultTrack(TrackPreset::kD1));
  ExpertSpec expert;
  expert.noise_std = 0.0;
  expert.d_bar_star = -0.4;
  const auto laps = GenerateDemos(*track, expert, 8);
  std::vector<double> dbars;
  int max_epochs = 0;
  bool all_within = true;
  for (int part = 0; part < 4; ++part) {
    const std::vector<DemoTrajectory> pair(laps.begin() + 2 * part,
                                           laps.begin() + 2 * part + 2);
    const PreparedData data = PrepareData(pair, kDefaultDt, 10.0, 10.0, 0);
    TrainConfig cfg;
    cfg.epochs = 50;
    const Policy init = InitialPolicy(PolicyKind::kStaticD1, track, 1);
    Evaluate(init, data.val, *track, cfg.horizon, cfg.t_s);
    const TrainResult r = TrainBco(init, *track, data.train, data.val, cfg);
    Evaluate(r.policy, data.val, *track, cfg.horizon, cfg.t_s);
    const double dbar = ProjectStatic(r.policy.raw(), track->lane_width()).theta.values(3);
    dbars.push_back(dbar);
    max_epochs = std::max<int>(max_epochs, r.report.history.size());
    all_within = all_within && std::abs(dbar + 0.4) <= 0.05;
  }
  const auto [lo, hi] = std::minmax_element(dbars.begin(), dbars.end());
  const double spread = *hi - *lo;
  const double secs = Seconds(t0);
  Report(5, "parameter_recovery",
         all_within && spread <= 0.1 && max_epochs <= 50 && secs <= 1800.0,
         Fmt("learned d_bar %.4f %.4f %.4f %.4f (target -0.4), spread %.4f, "
             "max epochs %d [%.1f s]",
             dbars[0], dbars[1], dbars[2], dbars[3], spread, max_epochs, secs));
}

// D2: SL pretraining, MPC-BCO refinement and the baseline network trained on
// the same windows. Also runs the stress rollouts.
void D2Experiments() {
  const auto t0 = std::chrono::steady_clock::now();
  auto track = std::make_shared<const TrackSpec>(DefaultTrack(TrackPreset::kD2));
  ExpertSpec expert;
  expert.variant = ExpertVariant::kD2CurvatureDependent;
  expert.seed = 5;
  const auto laps = GenerateDemos(*track, expert, 4);
  const PreparedData data = PrepareData(laps, kDefaultDt, 10.0, 10.0, 1);

  TrainConfig cfg;
  cfg.epochs = 15;
  cfg.patience = 4;

  const Policy untrained = InitialPolicy(PolicyKind::kMlpD2, track, 3);
  Evaluate(untrained, data.val, *track, cfg.horizon, cfg.t_s);
  const SlResult sl = PretrainSlDbar(untrained, *track, data.train_laps, SlConfig{});
  const double sl_val = EvaluateImitation(sl.policy, *track, data.val, cfg);
  const TrainResult bco = TrainBco(sl.policy, *track, data.train, data.val, cfg);
  const double bco_val = EvaluateImitation(bco.policy, *track, data.val, cfg);
  const double reduction = 1.0 - bco_val / sl_val;
  Report(6, "closed_loop_refinement", reduction >= 0.30,
         Fmt("held-out J after SL %.4f, after BCO %.4f (%zu windows), reduction "
             "%.1f%%, %zu BCO epochs [%.1f s]",
             sl_val, bco_val, data.val.size(), 100.0 * reduction,
             bco.report.history.size(), Seconds(t0)));

  const auto t1 = std::chrono::steady_clock::now();
  TrainConfig base_cfg = cfg;
  base_cfg.epochs = 50;
  base_cfg.patience = 5;
  const Policy base_init = InitialPolicy(PolicyKind::kBaseline, track, 3);
  const TrainResult base = TrainBco(base_init, *track, data.train, data.val, base_cfg);
  Evaluate(sl.policy, data.val, *track, cfg.horizon, cfg.t_s);
  const EvalReport mpc_eval = Evaluate(bco.policy, data.val, *track, cfg.horizon, cfg.t_s);
  const EvalReport base_eval = Evaluate(base.policy, data.val, *track, cfg.horizon, cfg.t_s);
  const double mpc_gap = std::abs(mpc_eval.comfort - mpc_eval.expert_comfort);
  const double base_gap = std::abs(base_eval.comfort - base_eval.expert_comfort);
  Report(7, "baseline_ordering",
         mpc_eval.imitation_sum_sq < base_eval.imitation_sum_sq && mpc_gap < base_gap &&
             base_eval.failures == 0,
         Fmt("imitation MPC-BCO %.4f vs baseline %.4f m^2; comfort expert %.3f, "
             "MPC-BCO %.3f (gap %.3f), baseline %.3f (gap %.3f); baseline %zu epochs, "
             "aborted %d [%.1f s]",
             mpc_eval.imitation_sum_sq, base_eval.imitation_sum_sq,
             mpc_eval.expert_comfort, mpc_eval.comfort, mpc_gap, base_eval.comfort,
             base_gap, base.report.history.size(), base_eval.failures, Seconds(t1)));

  // Stress rollouts: 0.8 w/2 on the outer side, entering curves.
  const auto starts = StressStarts(*track, 20, 9);
  RolloutOptions ro;
  ro.duration = 10.0;
  int base_violations = 0, base_aborted = 0, mpc_stress_violations = 0;
  for (const auto& s0 : starts) {
    try {
      const RolloutTape tape = Rollout(base.policy, *track, s0, ro);
      base_violations += SafetyViolations(tape.states, track->lane_width());
    } catch (const RolloutAbortedError&) {
      // The plant left the Frenet domain, which lies far outside the lane.
      ++base_aborted;
    }
    for (const Policy* p : {&sl.policy, &bco.policy}) {
      try {
        const RolloutTape tape = Rollout(*p, *track, s0, ro);
        const bool converged = std::all_of(tape.flags.begin(), tape.flags.end(),
                                           [](const StepFlags& f) { return f.converged; });
        if (!converged) {
          ++mpc_safety.skipped;
          continue;
        }
        ++mpc_safety.rollouts;
        mpc_stress_violations += SafetyViolations(tape.states, track->lane_width());
      } catch (const RolloutAbortedError&) {
        ++mpc_safety.skipped;
      }
    }
  }
  mpc_safety.violations += mpc_stress_violations;
  const int base_total = base_violations + base_aborted;
  Report(4, "safety",
         mpc_safety.violations == 0 && base_total >= 1 && mpc_safety.rollouts > 0,
         Fmt("MPC policies: %d violations over %d converged rollouts (%d skipped, "
             "%d of the violations on stress starts); trained baseline on 20 stress "
             "starts: %d violating steps, %d rollouts left the road",
             mpc_safety.violations, mpc_safety.rollouts, mpc_safety.skipped,
             mpc_stress_violations, base_violations, base_aborted));
}

void Integrity() {
  const auto t0 = std::chrono::steady_clock::now();
  const IntegrityReport r = RunIntegritySuite();
  std::string detail;
  for (const auto& c : r.checks) {
    detail += Fmt("%s %s %.2e; ", c.name.c_str(), c.passed ? "ok" : "FAILED", c.value);
  }
  Report(8, "integrity_suite", r.AllPassed(), detail + Fmt("[%.1f s]", Seconds(t0)));
}

}  // namespace
}  // namespace mpcil

int main() {
  using namespace mpcil;
  SolveQuality();
  SensitivityCorrectness();
  BpttCorrectness();
  ParameterRecovery();
  D2Experiments();
  Integrity();
  std::printf("summary: %d of 8 criteria failed\n", failures);
  return failures ? 1 : 0;
}
