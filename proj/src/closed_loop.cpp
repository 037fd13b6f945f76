#include "mpcil/closed_loop.hpp"

#include <spdlog/spdlog.h>

#include <cmath>
#include <sstream>

#include "mpcil/errors.hpp"
#include "text_io.hpp"

namespace mpcil {

CurvaturePreview LatentQ(const TrackSpec& track, const VehicleState& s) {
  return track.Preview(s(kSigma));
}

RolloutTape Rollout(const Policy& policy, const TrackSpec& track,
                    const VehicleState& s0, const RolloutOptions& opts) {
  const double ratio = opts.duration / opts.dt;
  const int steps = static_cast<int>(std::lround(ratio));
  if (steps < 0 || std::abs(ratio - steps) > 1e-9) {
    throw std::invalid_argument("rollout duration must be a multiple of dt");
  }
  RolloutTape tape;
  tape.dt = opts.dt;
  tape.track_name = track.name();
  tape.grad_start_step = opts.grad_start_step;
  tape.num_params = policy.num_params();
  tape.states.reserve(steps + 1);
  tape.states.push_back(s0);

  std::optional<PrimalDualSolution> warm;
  double last_action = 0.0;
  int failures = 0;
  for (int t = 0; t < steps; ++t) {
    const VehicleState& s = tape.states.back();
    const CurvaturePreview chi = LatentQ(track, s);
    const bool grads_here = opts.record_grads && t >= opts.grad_start_step;

    StepFlags flags;
    double action = last_action;
    Eigen::VectorXd da_draw = Eigen::VectorXd::Zero(policy.num_params());
    Vec6 da_ds = Vec6::Zero();
    SolverDiagnostics diag;
    double d_bar = 0.0;
    try {
      PolicyStep step = policy.Act(s, chi, warm ? &*warm : nullptr, false);
      d_bar = step.d_bar;
      if (step.solution) diag = step.solution->diagnostics;
      flags.converged = step.converged;
      flags.relaxed = step.relaxed;
      if (step.converged) {
        action = step.action;
        if (grads_here) {
          try {
            if (step.nlp) {
              const PolicyJacobians pj = ComputePolicyJacobians(
                  *step.solution, *step.nlp, opts.sensitivity);
              da_ds = pj.du0_ds;
              if (policy.kind() == PolicyKind::kStaticD1) {
                da_draw = pj.du0_dtheta.cwiseProduct(
                    ProjectStatic(policy.raw(), track.lane_width()).jacobian);
              } else {
                Eigen::VectorXd dbar_grad;
                policy.Dbar(chi, &dbar_grad);
                da_draw = pj.du0_dtheta(0) * dbar_grad;
              }
            } else {
              const PolicyStep g = policy.Act(s, chi, nullptr, true);
              da_draw = g.da_draw;
              da_ds = g.da_ds;
            }
          } catch (const SingularKktError& e) {
            flags.grad_failed = true;
            spdlog::warn("step {}: sensitivity failed ({}, cond {:.3g})", t,
                         e.what(), e.condition());
          }
        }
      }
      if (step.solution && step.nlp) {
        warm = ShiftWarmStart(*step.solution, *step.nlp);
      }
    } catch (const InfeasibleStartError& e) {
      flags.converged = false;
      spdlog::warn("step {}: {}", t, e.what());
      warm.reset();
    } catch (const SingularityError& e) {
      flags.converged = false;
      spdlog::warn("step {}: {}", t, e.what());
      warm.reset();
    }

    if (!flags.converged) {
      flags.reused_action = true;
      ++failures;
      if (failures >= opts.max_consecutive_failures) {
        throw RolloutAbortedError("rollout aborted after " +
                                  std::to_string(failures) +
                                  " consecutive solver failures at step " +
                                  std::to_string(t));
      }
    } else {
      failures = 0;
    }
    if (flags.reused_action || flags.grad_failed) tape.degraded = true;
    last_action = action;

    if (opts.record_grads) {
      StepJacobians j;
      try {
        j = StepRk4Jacobians(s, action, opts.plant, track, opts.dt);
      } catch (const SingularityError& e) {
        throw RolloutAbortedError(std::string("plant left the Frenet domain at step ") +
                                  std::to_string(t) + ": " + e.what());
      }
      tape.plant_ds.push_back(j.dx);
      tape.plant_da.push_back(j.du);
      tape.policy_ds.push_back(da_ds);
      tape.policy_draw.push_back(grads_here ? da_draw : Eigen::VectorXd());
    }
    tape.actions.push_back(action);
    tape.latents.push_back(chi);
    tape.d_bar.push_back(d_bar);
    tape.flags.push_back(flags);
    tape.diagnostics.push_back(diag);
    try {
      tape.states.push_back(StepRk4(s, action, opts.plant, track, opts.dt));
    } catch (const SingularityError& e) {
      throw RolloutAbortedError(std::string("plant left the Frenet domain at step ") +
                                std::to_string(t) + ": " + e.what());
    }
  }
  return tape;
}

std::string FormatRolloutCsv(const RolloutTape& tape, const TrackSpec& track) {
  std::ostringstream os;
  os << "t,sigma,d,theta_e,v_y,psi_dot,delta,action,kappa,converged\n";
  for (std::size_t i = 0; i < tape.states.size(); ++i) {
    const VehicleState& s = tape.states[i];
    const bool has_action = i < tape.actions.size();
    os << text::FormatDouble(i * tape.dt) << ',' << text::FormatDouble(s(kSigma))
       << ',' << text::FormatDouble(s(kD)) << ','
       << text::FormatDouble(s(kThetaE)) << ',' << text::FormatDouble(s(kVy))
       << ',' << text::FormatDouble(s(kYawRate)) << ','
       << text::FormatDouble(s(kDelta)) << ','
       << (has_action ? text::FormatDouble(tape.actions[i]) : std::string())
       << ',' << text::FormatDouble(track.CurvatureAt(s(kSigma))) << ','
       << (has_action ? (tape.flags[i].converged ? "1" : "0") : "") << '\n';
  }
  return os.str();
}

void SaveRolloutCsv(const std::string& path, const RolloutTape& tape,
                    const TrackSpec& track) {
  text::WriteFile(path, FormatRolloutCsv(tape, track));
}

}  // namespace mpcil
