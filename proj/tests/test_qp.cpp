#include <gtest/gtest.h>

#include "mpcil/qp.hpp"

namespace mpcil {
namespace {

// min (x0-1)^2 + (x1-2)^2  s.t.  x0 + x1 <= 2  ->  x = (0.5, 1.5), mult 1.
TEST(Qp, ProjectionOntoHalfPlane) {
  DenseQp qp;
  qp.hessian = 2.0 * Eigen::Matrix2d::Identity();
  qp.gradient = Eigen::Vector2d(-2, -4);
  qp.constraints = Eigen::Vector2d(-1, -1);
  qp.offsets = Eigen::VectorXd::Constant(1, 2.0);
  const QpResult r = SolveQp(qp);
  ASSERT_EQ(r.status, QpStatus::kOptimal);
  EXPECT_NEAR(r.x(0), 0.5, 1e-12);
  EXPECT_NEAR(r.x(1), 1.5, 1e-12);
  EXPECT_NEAR(r.multipliers(0), 1.0, 1e-12);
  ASSERT_EQ(r.active.size(), 1u);
}

TEST(Qp, InactiveConstraintGivesUnconstrainedMinimum) {
  DenseQp qp;
  qp.hessian = Eigen::Matrix2d::Identity();
  qp.gradient = Eigen::Vector2d(-1, 1);
  qp.constraints = Eigen::Vector2d(1, 0);
  qp.offsets = Eigen::VectorXd::Constant(1, 5.0);
  const QpResult r = SolveQp(qp);
  ASSERT_EQ(r.status, QpStatus::kOptimal);
  EXPECT_NEAR(r.x(0), 1.0, 1e-14);
  EXPECT_NEAR(r.x(1), -1.0, 1e-14);
  EXPECT_EQ(r.multipliers(0), 0.0);
  EXPECT_TRUE(r.active.empty());
}

TEST(Qp, DetectsInfeasibility) {
  DenseQp qp;
  qp.hessian = Eigen::Matrix<double, 1, 1>::Identity();
  qp.gradient = Eigen::VectorXd::Zero(1);
  qp.constraints = Eigen::RowVector2d(1, -1);  // x >= 1 and x <= -1
  qp.offsets = Eigen::Vector2d(-1, -1);
  EXPECT_EQ(SolveQp(qp).status, QpStatus::kInfeasible);
}

TEST(Qp, KktConditionsOnRandomProblems) {
  std::srand(1);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 6, m = 8;
    const Eigen::MatrixXd a = Eigen::MatrixXd::Random(n, n);
    DenseQp qp;
    qp.hessian = a * a.transpose() + Eigen::MatrixXd::Identity(n, n);
    qp.gradient = Eigen::VectorXd::Random(n);
    qp.constraints = Eigen::MatrixXd::Random(n, m);
    qp.offsets = Eigen::VectorXd::Random(m).cwiseAbs();  // x = 0 feasible
    const QpResult r = SolveQp(qp);
    ASSERT_EQ(r.status, QpStatus::kOptimal);
    const Eigen::VectorXd slack = qp.constraints.transpose() * r.x + qp.offsets;
    EXPECT_GT(slack.minCoeff(), -1e-10);
    EXPECT_GT(r.multipliers.minCoeff(), -1e-14);
    EXPECT_LT(slack.cwiseProduct(r.multipliers).cwiseAbs().maxCoeff(), 1e-10);
    const Eigen::VectorXd stat = qp.hessian * r.x + qp.gradient -
                                 qp.constraints * r.multipliers;
    EXPECT_LT(stat.norm(), 1e-10);
  }
}

}  // namespace
}  // namespace mpcil
