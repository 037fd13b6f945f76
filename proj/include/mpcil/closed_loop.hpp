#ifndef MPCIL_CLOSED_LOOP_HPP_
#define MPCIL_CLOSED_LOOP_HPP_

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "mpcil/policy.hpp"
#include "mpcil/track.hpp"
#include "mpcil/vehicle.hpp"

namespace mpcil {

// chi = Q(s): curvature preview at s.sigma. No gradient flows through it.
CurvaturePreview LatentQ(const TrackSpec& track, const VehicleState& s);

struct RolloutOptions {
  double duration = 10.0;  // s, a multiple of dt
  double dt = kDefaultDt;
  bool record_grads = false;
  // Policy Jacobians are only computed for steps t >= grad_start_step.
  int grad_start_step = 0;
  int max_consecutive_failures = 3;
  VehicleParams plant;
  SensitivityOptions sensitivity;
};

struct StepFlags {
  bool converged = true;
  bool relaxed = false;
  bool reused_action = false;  // solver failed, previous action applied
  bool grad_failed = false;    // sensitivity solve failed
};

struct RolloutTape {
  double dt = kDefaultDt;
  std::string track_name;
  std::vector<VehicleState> states;  // steps + 1
  std::vector<double> actions;
  std::vector<CurvaturePreview> latents;
  std::vector<double> d_bar;
  std::vector<StepFlags> flags;
  std::vector<SolverDiagnostics> diagnostics;
  // Gradient records (empty unless record_grads).
  std::vector<Mat6> plant_ds;
  std::vector<Vec6> plant_da;
  std::vector<Eigen::VectorXd> policy_draw;  // empty before grad_start_step
  std::vector<Vec6> policy_ds;
  int grad_start_step = 0;
  int num_params = 0;
  bool degraded = false;

  int steps() const { return static_cast<int>(actions.size()); }
};

// Closed-loop simulation with the RK4 plant and shift-by-one warm starts.
// A failed solve reuses the previous action and flags the step; the rollout
// throws RolloutAbortedError after max_consecutive_failures in a row, or when
// the plant leaves the Frenet domain.
RolloutTape Rollout(const Policy& policy, const TrackSpec& track,
                    const VehicleState& s0, const RolloutOptions& opts);

// CSV: t,sigma,d,theta_e,v_y,psi_dot,delta,action,kappa,converged
std::string FormatRolloutCsv(const RolloutTape& tape, const TrackSpec& track);
void SaveRolloutCsv(const std::string& path, const RolloutTape& tape,
                    const TrackSpec& track);

}  // namespace mpcil

#endif  // MPCIL_CLOSED_LOOP_HPP_
