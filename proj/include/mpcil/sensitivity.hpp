#ifndef MPCIL_SENSITIVITY_HPP_
#define MPCIL_SENSITIVITY_HPP_

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <string>
#include <vector>

#include "mpcil/ocp.hpp"

namespace mpcil {

struct SensitivityOptions {
  double active_threshold = 1e-6;    // mu_i above this marks row i active
  double max_condition = 1e12;       // SingularKktError above this estimate
};

// Implicit system F(z, theta, s) = 0 with z = (w, lambda, mu). Row blocks:
//   [0, np)            stationarity of the Lagrangian
//   [np, np + ni)      h_i for active rows, -mu_i for inactive rows
//   [np + ni, nz)      equality constraints
struct KktSystem {
  int num_primal = 0;
  int num_equalities = 0;
  int num_inequalities = 0;
  Eigen::VectorXd residual;
  Eigen::SparseMatrix<double> dF_dz;
  Eigen::MatrixXd dF_dtheta;
  Eigen::MatrixXd dF_ds;  // nz x 6
  std::vector<bool> active;
  int weakly_active = 0;

  int size() const { return num_primal + num_equalities + num_inequalities; }
  // Column offsets of lambda and mu inside z.
  int LambdaColumn() const { return num_primal; }
  int MuColumn() const { return num_primal + num_equalities; }
};

KktSystem BuildKktSystem(const PrimalDualSolution& z, const NlpInstance& nlp,
                         const SensitivityOptions& opts = {});

struct AdjointResult {
  Eigen::VectorXd theta_bar;
  Vec6 s_bar;
  double condition = 0.0;  // 1-norm condition estimate of dF_dz
};

// theta_bar = -(dF/dtheta)^T (dF/dz)^{-T} zbar, same for s. zbar is laid out
// as z = (w, lambda, mu).
AdjointResult AdjointVjp(const KktSystem& kkt, const Eigen::VectorXd& zbar,
                         const SensitivityOptions& opts = {});

struct PolicyJacobians {
  Eigen::VectorXd du0_dtheta;
  Vec6 du0_ds;
  double condition = 0.0;
};

// One adjoint solve with the u_0 selector as cotangent.
PolicyJacobians ComputePolicyJacobians(const PrimalDualSolution& z,
                                       const NlpInstance& nlp,
                                       const SensitivityOptions& opts = {});

// Debug dump of dF_dz as "row col value" lines (0-based).
void WriteKktTriplets(const std::string& path, const KktSystem& kkt);

}  // namespace mpcil

#endif  // MPCIL_SENSITIVITY_HPP_
