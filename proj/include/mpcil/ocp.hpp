#ifndef MPCIL_OCP_HPP_
#define MPCIL_OCP_HPP_

#include <Eigen/Dense>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mpcil/track.hpp"
#include "mpcil/vehicle.hpp"

namespace mpcil {

// D1: stage cost W_d (d - dbar)^2 + W_theta theta^2 + W_ddelta ddelta^2.
// D2: stage cost theta^2 + ddelta^2, terminal (d_N - dbar)^2.
enum class CostVariant { kD1Stage, kD2Terminal };

struct BoxBounds {
  double delta_max = 0.5;       // rad
  double delta_rate_max = 0.8;  // rad/s
  double v_y_max = 5.0;         // m/s
  double yaw_rate_max = 1.5;    // rad/s
};

enum class HessianMode { kGaussNewton, kExact };

struct SolverOptions {
  double tolerance = 1e-6;
  int max_iterations = 50;
  double regularization = 1e-6;  // Levenberg term on the primal step
  double lane_penalty = 1e4;     // exact l1 weight on lane slack
  bool allow_relaxation = true;
  HessianMode hessian = HessianMode::kGaussNewton;
};

struct OcpSpec {
  int horizon = 20;
  double dt = kDefaultDt;
  CostVariant variant = CostVariant::kD1Stage;
  BoxBounds bounds;
  std::shared_ptr<const TrackSpec> track;
  VehicleParams vehicle;
  // Weight of (d_N - dbar)^2 added to the D1 cost; 0 in the plain D1 variant.
  double d1_terminal_weight = 0.0;
  // Multiplies the entire objective.
  double cost_scale = 1.0;
  SolverOptions solver;

  double lane_width() const { return track->lane_width(); }
  double half_width() const { return track->half_width(); }
  // Throws InvalidSpecError on malformed fields.
  void Validate() const;
};

OcpSpec MakeOcpSpec(std::shared_ptr<const TrackSpec> track,
                    CostVariant variant);

// MPC-facing parameters: D1 (W_d, W_theta, W_ddelta, dbar), D2 (dbar_N).
struct ThetaVector {
  CostVariant variant = CostVariant::kD1Stage;
  Eigen::VectorXd values;

  static ThetaVector D1(double w_d, double w_theta, double w_ddelta,
                        double d_bar);
  static ThetaVector D2(double d_bar_terminal);
  int size() const { return static_cast<int>(values.size()); }
};

inline int ThetaSize(CostVariant v) {
  return v == CostVariant::kD1Stage ? 4 : 1;
}

// a0 * w[i0] + a1 * w[i1] <= rhs   (i1 < 0 when the row has one entry)
struct LinearInequality {
  int i0 = -1;
  double a0 = 0.0;
  int i1 = -1;
  double a1 = 0.0;
  double rhs = 0.0;
  // Stage of the constrained variable (1..N for states, 0..N-1 for
  // controls) and row kind; used to shift multipliers between solves.
  int stage = 0;
  int kind = 0;
};

// Direct multiple shooting transcription. Primal layout:
//   w = [x_0, u_0, x_1, u_1, ..., x_{N-1}, u_{N-1}, x_N, s_1..s_N]
// where the lane slacks s_k only exist in the relaxed instance.
// Equality blocks: block 0 is x_0 - s0, block k+1 is F_k(x_k, u_k) - x_{k+1}.
class NlpInstance {
 public:
  NlpInstance(OcpSpec spec, VehicleState s0, ThetaVector theta,
              std::vector<double> kappa, bool relaxed);

  const OcpSpec& spec() const { return spec_; }
  const VehicleState& initial_state() const { return s0_; }
  const ThetaVector& theta() const { return theta_; }
  const std::vector<double>& kappa() const { return kappa_; }
  bool relaxed() const { return relaxed_; }
  int horizon() const { return spec_.horizon; }

  int num_primal() const { return num_primal_; }
  int num_equalities() const { return kNx * (spec_.horizon + 1); }
  int num_inequalities() const {
    return static_cast<int>(inequalities_.size());
  }
  int num_theta() const { return theta_.size(); }

  static int XIndex(int k, int i) { return (kNx + 1) * k + i; }
  static int UIndex(int k) { return (kNx + 1) * k + kNx; }
  int SlackIndex(int k) const {  // k = 1..N
    return (kNx + 1) * spec_.horizon + kNx + (k - 1);
  }

  const std::vector<LinearInequality>& inequalities() const {
    return inequalities_;
  }
  // Objective: 1/2 sum q_i (w_i - ref_i)^2 + sum lin_i w_i.
  const Eigen::VectorXd& hessian_diagonal() const { return q_; }
  const Eigen::VectorXd& reference() const { return ref_; }
  const Eigen::VectorXd& linear_cost() const { return lin_; }

  double Objective(const Eigen::VectorXd& w) const;
  Eigen::VectorXd ObjectiveGradient(const Eigen::VectorXd& w) const;
  // d(grad objective)/d theta, num_primal x num_theta.
  Eigen::MatrixXd ObjectiveGradientThetaJacobian(const Eigen::VectorXd& w) const;
  // h(w) = A w - rhs, feasible when <= 0.
  Eigen::VectorXd InequalityValues(const Eigen::VectorXd& w) const;

  // Copies with one input changed; the curvature profile is kept.
  NlpInstance WithTheta(const ThetaVector& theta) const;
  NlpInstance WithInitialState(const VehicleState& s0) const;
  NlpInstance WithRelaxation(bool relaxed) const;

 private:
  void BuildCost();
  void BuildInequalities();

  OcpSpec spec_;
  VehicleState s0_;
  ThetaVector theta_;
  std::vector<double> kappa_;
  bool relaxed_;
  int num_primal_;
  std::vector<LinearInequality> inequalities_;
  Eigen::VectorXd q_, ref_, lin_;
};

struct SolverDiagnostics {
  int iterations = 0;     // SQP steps taken
  int qp_iterations = 0;  // summed over all QPs
  double kkt_residual = 0.0;
  int active_set_size = 0;
  bool relaxed = false;
  bool converged = false;
  double solve_time_ms = 0.0;
  std::vector<double> merit_history;  // merit at each accepted iterate
  std::vector<double> step_sizes;
};

// z = (w, lambda, mu) with identified active set.
struct PrimalDualSolution {
  int horizon = 0;
  Eigen::VectorXd primal;
  Eigen::VectorXd lambda;  // num_equalities
  Eigen::VectorXd mu;      // num_inequalities, >= 0
  std::vector<bool> active_set;
  double kkt_residual = 0.0;
  bool converged = false;
  bool relaxed = false;
  SolverDiagnostics diagnostics;

  VehicleState state(int k) const {
    return primal.segment<kNx>(NlpInstance::XIndex(k, 0));
  }
  double control(int k) const { return primal(NlpInstance::UIndex(k)); }
  double first_control() const { return control(0); }
};

// Per-stage model evaluation shared by the solver and the sensitivity layer.
struct NlpEvaluation {
  std::vector<Vec6> next;       // F_k(x_k, u_k)
  std::vector<Mat6> a;          // dF_k/dx_k
  std::vector<Vec6> b;          // dF_k/du_k
  Eigen::VectorXd equality;     // num_equalities
  Eigen::VectorXd gradient;     // objective gradient
  Eigen::VectorXd inequality;   // h(w)
};
NlpEvaluation Evaluate(const NlpInstance& nlp, const Eigen::VectorXd& w);

struct KktResidualParts {
  double stationarity = 0.0;
  double equality = 0.0;
  double inequality = 0.0;       // positive part of h
  double dual_feasibility = 0.0; // positive part of -mu
  double complementarity = 0.0;  // max |mu_i h_i|
  double Max() const;
};

// Stationarity of the true Lagrangian (no regularization).
KktResidualParts KktResidualBreakdown(const PrimalDualSolution& z,
                                      const NlpInstance& nlp);
double KktResidual(const PrimalDualSolution& z, const NlpInstance& nlp);

// Curvature profile kappa_k read at sigma_k of the guess (shifted to s0), or
// at s0.sigma + k v_x dt without a guess.
NlpInstance Transcribe(const OcpSpec& spec, const VehicleState& s0,
                       const ThetaVector& theta,
                       const PrimalDualSolution* guess = nullptr,
                       bool relaxed = false);

// Regularized Gauss-Newton SQP. When the QP becomes infeasible and relaxation
// is allowed, the relaxed instance is solved instead (solution.relaxed = true;
// use nlp.WithRelaxation(true) to get the matching instance). Throws
// InfeasibleStartError if even the relaxed QP is infeasible.
PrimalDualSolution Solve(const NlpInstance& nlp,
                         const PrimalDualSolution* warm = nullptr);

// Shift by one stage, last stage duplicated.
PrimalDualSolution ShiftWarmStart(const PrimalDualSolution& sol,
                                  const NlpInstance& nlp);

struct MpcOutput {
  double action = 0.0;
  PrimalDualSolution solution;
  NlpInstance nlp;  // instance the solution belongs to
};

// Transcribe + solve, returning u_0. If the solved sigma trajectory reads a
// different curvature profile than the one transcribed, it is re-solved once
// with the refreshed profile.
MpcOutput MpcControl(const OcpSpec& spec, const VehicleState& s0,
                     const ThetaVector& theta,
                     const PrimalDualSolution* warm = nullptr);

}  // namespace mpcil

#endif  // MPCIL_OCP_HPP_
