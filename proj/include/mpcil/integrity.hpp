#ifndef MPCIL_INTEGRITY_HPP_
#define MPCIL_INTEGRITY_HPP_

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "mpcil/closed_loop.hpp"
#include "mpcil/datasets.hpp"
#include "mpcil/ocp.hpp"
#include "mpcil/policy.hpp"
#include "mpcil/track.hpp"

namespace mpcil {

// Finite-difference and property checks shared by `grad-check`, the unit
// tests and the acceptance suite.

struct CheckResult {
  std::string name;
  double value = 0.0;      // measured error or ratio
  double threshold = 0.0;  // pass bound (ratio checks use |value - 16|)
  bool passed = false;
  std::string detail;
};

struct IntegrityReport {
  std::vector<CheckResult> checks;
  bool AllPassed() const;
  std::string Format() const;
};

// Vector relative error ||a - b|| / max(||a||, ||b||, floor).
double RelativeError(const Eigen::VectorXd& a, const Eigen::VectorXd& b,
                     double floor = 1e-6);

// Solver settings for the tight-tolerance oracles (exact Hessian SQP).
SolverOptions TightSolverOptions();

struct RandomInstance {
  OcpSpec spec;
  VehicleState s0;
  ThetaVector theta;
};

// In-lane state and valid theta. With near_boundary the vehicle starts at
// 0.85..0.95 of w/2 heading outward, which makes the lane row bind.
RandomInstance DrawInstance(std::mt19937_64& rng, CostVariant variant,
                            std::shared_ptr<const TrackSpec> track,
                            bool near_boundary = false);

struct SensitivityFdResult {
  bool converged = false;       // base and both perturbed solves
  bool active_set_stable = false;
  bool lane_active = false;     // a lane row is active at the base solution
  double theta_error = 0.0;     // relative, over all theta directions
  double state_error = 0.0;     // relative, over all state directions
  double condition = 0.0;
};

// Central differences of u_0 against the adjoint Jacobians.
SensitivityFdResult CheckSensitivityFd(const RandomInstance& inst,
                                       double h = 1e-5);

// Short closed-loop case for the BPTT oracle: a random in-lane start, a
// demonstration produced by a D1 expert with a random offset, and a policy of
// the requested kind with seeded parameters and tight solver settings.
struct BpttCase {
  std::shared_ptr<const TrackSpec> track;
  Policy policy;
  VehicleState s0;
  DemoTrajectory demo;
};
BpttCase MakeBpttCase(PolicyKind kind, std::uint64_t seed, double horizon = 1.0);

struct BpttFdResult {
  bool ok = false;      // all rollouts completed without degraded steps
  bool stable = false;  // active-set sizes unchanged under every perturbation
  double rel_error = 0.0;
  int directions = 0;
};

// Central differences of the scored loss (full rollouts per perturbation)
// against BpttGradient. The static policy is checked along every coordinate,
// networks along three random directions.
BpttFdResult CheckBpttFd(const BpttCase& c, double horizon, double t_s,
                         std::uint64_t seed);

CheckResult CheckRk4Order();
CheckResult CheckPlantJacobian(std::uint64_t seed, int samples = 50);
CheckResult CheckProjectionGradient(std::uint64_t seed, int samples = 50);
CheckResult CheckMirrorSymmetry(std::uint64_t seed, int samples = 10);
CheckResult CheckCostScaling(std::uint64_t seed, int samples = 10);
CheckResult CheckMlpGradient(std::uint64_t seed);
CheckResult CheckBaselineGradient(std::uint64_t seed);
CheckResult CheckSensitivitySuite(std::uint64_t seed, int samples = 10);
CheckResult CheckBpttSuite(std::uint64_t seed);

// All of the above.
IntegrityReport RunIntegritySuite(std::uint64_t seed = 7);

}  // namespace mpcil

#endif  // MPCIL_INTEGRITY_HPP_
