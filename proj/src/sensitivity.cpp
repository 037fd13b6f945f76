#include "mpcil/sensitivity.hpp"

#include <spdlog/spdlog.h>

#include <Eigen/SparseLU>
#include <cmath>
#include <fstream>
#include <limits>

#include "mpcil/errors.hpp"

namespace mpcil {
namespace {

using Triplet = Eigen::Triplet<double>;
using Lu = Eigen::SparseLU<Eigen::SparseMatrix<double>, Eigen::COLAMDOrdering<int>>;

// Hager's estimate of ||A^{-1}||_1 from solves with A and A^T.
double InverseOneNormEstimate(Lu& lu, int n) {
  Eigen::VectorXd x = Eigen::VectorXd::Constant(n, 1.0 / n);
  double est = 0.0;
  for (int iter = 0; iter < 5; ++iter) {
    const Eigen::VectorXd y = lu.solve(x);
    est = y.lpNorm<1>();
    const Eigen::VectorXd xi =
        y.unaryExpr([](double v) { return v >= 0.0 ? 1.0 : -1.0; });
    const Eigen::VectorXd z = lu.transpose().solve(xi);
    Eigen::Index j = 0;
    const double zmax = z.cwiseAbs().maxCoeff(&j);
    if (zmax <= z.dot(x)) break;
    x.setZero();
    x(j) = 1.0;
  }
  return est;
}

double OneNorm(const Eigen::SparseMatrix<double>& a) {
  double best = 0.0;
  for (int c = 0; c < a.outerSize(); ++c) {
    double sum = 0.0;
    for (Eigen::SparseMatrix<double>::InnerIterator it(a, c); it; ++it) {
      sum += std::abs(it.value());
    }
    best = std::max(best, sum);
  }
  return best;
}

}  // namespace

KktSystem BuildKktSystem(const PrimalDualSolution& z, const NlpInstance& nlp,
                         const SensitivityOptions& opts) {
  const int n = nlp.horizon();
  const int np = nlp.num_primal();
  const int ne = nlp.num_equalities();
  const int ni = nlp.num_inequalities();
  const auto& spec = nlp.spec();
  const NlpEvaluation ev = Evaluate(nlp, z.primal);

  KktSystem kkt;
  kkt.num_primal = np;
  kkt.num_equalities = ne;
  kkt.num_inequalities = ni;
  const int nz = kkt.size();
  const int col_lam = kkt.LambdaColumn();
  const int col_mu = kkt.MuColumn();
  const int row_ineq = np;
  const int row_eq = np + ni;

  std::vector<Triplet> t;
  t.reserve(40 * nz);
  kkt.residual = Eigen::VectorXd::Zero(nz);

  // Stationarity: grad phi + J_c^T lambda + A_h^T mu.
  Eigen::VectorXd stat = ev.gradient;
  const Eigen::VectorXd& q = nlp.hessian_diagonal();
  for (int i = 0; i < np; ++i) {
    if (q(i) != 0.0) t.emplace_back(i, i, q(i));
  }
  for (int k = 0; k < n; ++k) {
    const Vec6 lam = z.lambda.segment<kNx>(kNx * (k + 1));
    const auto h = StepRk4WeightedHessian(
        z.state(k), z.control(k), spec.vehicle, nlp.kappa()[k], spec.dt, lam);
    const int base = NlpInstance::XIndex(k, 0);
    for (int i = 0; i < kNx + 1; ++i) {
      for (int j = 0; j < kNx + 1; ++j) {
        if (h(i, j) != 0.0) t.emplace_back(base + i, base + j, h(i, j));
      }
    }
  }

  // Equality Jacobian J_c, placed as J_c (rows) and J_c^T (stationarity).
  auto add_jc = [&](int r, int c, double v) {
    t.emplace_back(row_eq + r, c, v);
    t.emplace_back(c, col_lam + r, v);
    stat(c) += v * z.lambda(r);
  };
  for (int i = 0; i < kNx; ++i) add_jc(i, NlpInstance::XIndex(0, i), 1.0);
  for (int k = 0; k < n; ++k) {
    for (int r = 0; r < kNx; ++r) {
      const int row = kNx * (k + 1) + r;
      for (int c = 0; c < kNx; ++c) {
        if (ev.a[k](r, c) != 0.0) add_jc(row, NlpInstance::XIndex(k, c), ev.a[k](r, c));
      }
      if (ev.b[k](r) != 0.0) add_jc(row, NlpInstance::UIndex(k), ev.b[k](r));
      add_jc(row, NlpInstance::XIndex(k + 1, r), -1.0);
    }
  }
  kkt.residual.segment(row_eq, ne) = ev.equality;

  // Inequalities.
  kkt.active.assign(ni, false);
  const auto& rows = nlp.inequalities();
  for (int i = 0; i < ni; ++i) {
    const auto& row = rows[i];
    const double mu = z.mu(i);
    const double hval = ev.inequality(i);
    auto entries = [&](auto&& fn) {
      fn(row.i0, row.a0);
      if (row.i1 >= 0) fn(row.i1, row.a1);
    };
    entries([&](int c, double a) {
      t.emplace_back(c, col_mu + i, a);
      stat(c) += a * mu;
    });
    if (mu > opts.active_threshold) {
      kkt.active[i] = true;
      entries([&](int c, double a) { t.emplace_back(row_ineq + i, c, a); });
      kkt.residual(row_ineq + i) = hval;
    } else {
      if (std::abs(mu) <= opts.active_threshold && hval > -opts.active_threshold) {
        ++kkt.weakly_active;
      }
      t.emplace_back(row_ineq + i, col_mu + i, -1.0);
      kkt.residual(row_ineq + i) = -mu;
    }
  }
  if (kkt.weakly_active > 0) {
    spdlog::warn("{} weakly active inequality row(s) treated as inactive",
                 kkt.weakly_active);
  }
  kkt.residual.head(np) = stat;

  kkt.dF_dz.resize(nz, nz);
  kkt.dF_dz.setFromTriplets(t.begin(), t.end());
  kkt.dF_dz.makeCompressed();

  kkt.dF_dtheta = Eigen::MatrixXd::Zero(nz, nlp.num_theta());
  kkt.dF_dtheta.topRows(np) = nlp.ObjectiveGradientThetaJacobian(z.primal);
  kkt.dF_ds = Eigen::MatrixXd::Zero(nz, kNx);
  kkt.dF_ds.block(row_eq, 0, kNx, kNx) = -Eigen::MatrixXd::Identity(kNx, kNx);
  return kkt;
}

AdjointResult AdjointVjp(const KktSystem& kkt, const Eigen::VectorXd& zbar,
                         const SensitivityOptions& opts) {
  const int nz = kkt.size();
  Lu lu;
  lu.compute(kkt.dF_dz);
  if (lu.info() != Eigen::Success) {
    throw SingularKktError("KKT factorization failed: " + lu.lastErrorMessage(),
                           std::numeric_limits<double>::infinity());
  }
  AdjointResult out;
  out.condition = OneNorm(kkt.dF_dz) * InverseOneNormEstimate(lu, nz);
  if (!std::isfinite(out.condition) || out.condition > opts.max_condition) {
    throw SingularKktError("KKT matrix is numerically singular", out.condition);
  }
  const Eigen::VectorXd y = lu.transpose().solve(zbar);
  out.theta_bar = -kkt.dF_dtheta.transpose() * y;
  out.s_bar = -kkt.dF_ds.transpose() * y;
  return out;
}

PolicyJacobians ComputePolicyJacobians(const PrimalDualSolution& z,
                                       const NlpInstance& nlp,
                                       const SensitivityOptions& opts) {
  const KktSystem kkt = BuildKktSystem(z, nlp, opts);
  Eigen::VectorXd zbar = Eigen::VectorXd::Zero(kkt.size());
  zbar(NlpInstance::UIndex(0)) = 1.0;
  const AdjointResult adj = AdjointVjp(kkt, zbar, opts);
  return PolicyJacobians{adj.theta_bar, adj.s_bar, adj.condition};
}

void WriteKktTriplets(const std::string& path, const KktSystem& kkt) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path);
  os.precision(17);
  for (int c = 0; c < kkt.dF_dz.outerSize(); ++c) {
    for (Eigen::SparseMatrix<double>::InnerIterator it(kkt.dF_dz, c); it; ++it) {
      os << it.row() << ' ' << it.col() << ' ' << it.value() << '\n';
    }
  }
}

}  // namespace mpcil
