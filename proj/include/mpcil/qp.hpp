#ifndef MPCIL_QP_HPP_
#define MPCIL_QP_HPP_

#include <Eigen/Dense>
#include <vector>

namespace mpcil {

// min 1/2 x^T H x + g^T x   s.t.  C^T x + c0 >= 0  (one column per row).
struct DenseQp {
  Eigen::MatrixXd hessian;
  Eigen::VectorXd gradient;
  Eigen::MatrixXd constraints;
  Eigen::VectorXd offsets;
};

enum class QpStatus { kOptimal, kInfeasible, kNotConvex, kMaxIterations };

struct QpResult {
  QpStatus status = QpStatus::kInfeasible;
  Eigen::VectorXd x;
  Eigen::VectorXd multipliers;  // >= 0, zero for inactive rows
  std::vector<int> active;      // indices of rows in the final active set
  int iterations = 0;
};

// Goldfarb-Idnani dual active-set method for strictly convex QPs.
QpResult SolveQp(const DenseQp& qp, int max_iterations = 1000);

}  // namespace mpcil

#endif  // MPCIL_QP_HPP_
