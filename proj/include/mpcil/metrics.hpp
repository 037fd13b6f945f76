#ifndef MPCIL_METRICS_HPP_
#define MPCIL_METRICS_HPP_

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "mpcil/closed_loop.hpp"
#include "mpcil/datasets.hpp"
#include "mpcil/policy.hpp"

namespace mpcil {

inline constexpr double kSafetyTolerance = 1e-6;  // m
inline constexpr double kTlcCap = 10.0;           // s

// Number of samples with |d| > w/2 + tol.
int SafetyViolations(const std::vector<VehicleState>& states, double lane_width,
                     double tol = kSafetyTolerance);

// sum_t a_y(s_t)^2 dt with a_y = dv_y/dt + v_x psi_dot.
double Comfort(const std::vector<VehicleState>& states, const VehicleParams& p,
               double dt);

// Frozen-control (ddelta = 0) RK4 prediction until |d| crosses w/2; returns
// the arc to the crossing divided by v_x, or +inf past the 10 s cap.
double TimeToLaneCrossing(const TrackSpec& track, const VehicleState& s,
                          const VehicleParams& p = {}, double dt = kDefaultDt);

struct TrajectoryMetrics {
  int demo_id = 0;
  double imitation_sum_sq = 0.0;  // m^2 over the scored window
  double imitation_rms = 0.0;     // m
  int safety_violations = 0;
  double comfort = 0.0;           // (m/s^2)^2 s
  double expert_comfort = 0.0;    // same measure on the demonstration
  double tlc_min = std::numeric_limits<double>::infinity();
  int nonconverged_steps = 0;
  bool aborted = false;
};

struct EvalReport {
  double imitation_sum_sq = 0.0;  // means over completed rollouts
  double imitation_rms = 0.0;
  int safety_violations = 0;      // total
  double comfort = 0.0;
  double expert_comfort = 0.0;
  double tlc_min = std::numeric_limits<double>::infinity();
  int failures = 0;               // aborted rollouts
  int nonconverged_steps = 0;
  std::vector<TrajectoryMetrics> per_trajectory;
};

struct EvalOptions {
  int n_subtraj = 5;
  std::uint64_t seed = 1;
  double horizon = 10.0;  // s
  double t_s = 5.0;       // s, start of the imitation window
  int threads = 1;
  RolloutOptions rollout;
};

// Seeded draw of n windows of `horizon` seconds from the laps.
std::vector<DemoTrajectory> SampleSubtrajectories(
    const std::vector<DemoTrajectory>& demos, int n, double horizon,
    std::uint64_t seed);

TrajectoryMetrics ScoreRollout(const RolloutTape& tape, const DemoTrajectory& demo,
                               const TrackSpec& track, int start_step,
                               const VehicleParams& p);

// Rolls out from each trajectory's s*_0. With sample = true, first draws
// opts.n_subtraj windows from `demos`; otherwise the given windows are used.
EvalReport EvaluatePolicy(const Policy& policy,
                          const std::vector<DemoTrajectory>& demos,
                          const TrackSpec& track, const EvalOptions& opts,
                          bool sample = true);

std::string FormatEvalReportCsv(const EvalReport& report);

}  // namespace mpcil

#endif  // MPCIL_METRICS_HPP_
