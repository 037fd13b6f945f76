#include "mpcil/qp.hpp"

#include <cmath>
#include <limits>

namespace mpcil {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kEps = std::numeric_limits<double>::epsilon();

// Appends d(iq..) to R by rotating J so that d has a single nonzero at iq.
bool AddConstraint(Eigen::MatrixXd& r, Eigen::MatrixXd& j, Eigen::VectorXd& d,
                   int& iq, double& r_norm) {
  const int n = static_cast<int>(d.size());
  for (int k = n - 1; k >= iq + 1; --k) {
    double cc = d(k - 1);
    double ss = d(k);
    const double h = std::hypot(cc, ss);
    if (h == 0.0) continue;
    d(k) = 0.0;
    ss /= h;
    cc /= h;
    if (cc < 0.0) {
      cc = -cc;
      ss = -ss;
      d(k - 1) = -h;
    } else {
      d(k - 1) = h;
    }
    const double xny = ss / (1.0 + cc);
    for (int i = 0; i < n; ++i) {
      const double t1 = j(i, k - 1);
      const double t2 = j(i, k);
      j(i, k - 1) = t1 * cc + t2 * ss;
      j(i, k) = xny * (t1 + j(i, k - 1)) - t2;
    }
  }
  ++iq;
  r.col(iq - 1).head(iq) = d.head(iq);
  if (std::abs(d(iq - 1)) <= kEps * r_norm) return false;
  r_norm = std::max(r_norm, std::abs(d(iq - 1)));
  return true;
}

void DeleteConstraint(Eigen::MatrixXd& r, Eigen::MatrixXd& j,
                      std::vector<int>& a, Eigen::VectorXd& u, int& iq,
                      int l) {
  const int n = static_cast<int>(j.rows());
  int qq = -1;
  for (int i = 0; i < iq; ++i) {
    if (a[i] == l) {
      qq = i;
      break;
    }
  }
  for (int i = qq; i < iq - 1; ++i) {
    a[i] = a[i + 1];
    u(i) = u(i + 1);
    r.col(i) = r.col(i + 1);
  }
  a[iq - 1] = a[iq];
  u(iq - 1) = u(iq);
  a[iq] = 0;
  u(iq) = 0.0;
  r.col(iq - 1).head(iq).setZero();
  --iq;
  if (iq == 0) return;
  for (int k = qq; k < iq; ++k) {
    double cc = r(k, k);
    double ss = r(k + 1, k);
    const double h = std::hypot(cc, ss);
    if (h == 0.0) continue;
    cc /= h;
    ss /= h;
    r(k + 1, k) = 0.0;
    if (cc < 0.0) {
      r(k, k) = -h;
      cc = -cc;
      ss = -ss;
    } else {
      r(k, k) = h;
    }
    const double xny = ss / (1.0 + cc);
    for (int c = k + 1; c < iq; ++c) {
      const double t1 = r(k, c);
      const double t2 = r(k + 1, c);
      r(k, c) = t1 * cc + t2 * ss;
      r(k + 1, c) = xny * (t1 + r(k, c)) - t2;
    }
    for (int i = 0; i < n; ++i) {
      const double t1 = j(i, k);
      const double t2 = j(i, k + 1);
      j(i, k) = t1 * cc + t2 * ss;
      j(i, k + 1) = xny * (j(i, k) + t1) - t2;
    }
  }
}

}  // namespace

QpResult SolveQp(const DenseQp& qp, int max_iterations) {
  const int n = static_cast<int>(qp.gradient.size());
  const int m = static_cast<int>(qp.offsets.size());
  QpResult res;
  res.multipliers = Eigen::VectorXd::Zero(m);

  Eigen::LLT<Eigen::MatrixXd> chol(qp.hessian);
  if (chol.info() != Eigen::Success) {
    res.status = QpStatus::kNotConvex;
    res.x = Eigen::VectorXd::Zero(n);
    return res;
  }
  // J = L^{-T}, so J J^T = H^{-1}.
  Eigen::MatrixXd j = chol.matrixU().solve(Eigen::MatrixXd::Identity(n, n));
  Eigen::MatrixXd r = Eigen::MatrixXd::Zero(n, n);
  Eigen::VectorXd x = chol.solve(-qp.gradient);
  double r_norm = 1.0;
  int iq = 0;

  std::vector<int> a(n + 1, 0);
  Eigen::VectorXd u = Eigen::VectorXd::Zero(n + 1);
  Eigen::VectorXd s(m), z(n), rr(n + 1), d(n);
  std::vector<bool> in_active(m, false);

  // Scale-aware feasibility tolerance on constraint values.
  Eigen::VectorXd col_norm(m);
  for (int i = 0; i < m; ++i) {
    col_norm(i) = qp.constraints.col(i).lpNorm<Eigen::Infinity>();
  }

  int iter = 0;
  while (true) {
    if (++iter > max_iterations) {
      res.status = QpStatus::kMaxIterations;
      break;
    }
    // Step 1: choose the most violated inactive constraint.
    int ip = -1;
    double ss = 0.0;
    for (int i = 0; i < m; ++i) {
      if (in_active[i]) continue;
      s(i) = qp.constraints.col(i).dot(x) + qp.offsets(i);
      const double tol =
          1e-12 * (1.0 + std::abs(qp.offsets(i)) +
                   col_norm(i) * x.lpNorm<Eigen::Infinity>());
      if (s(i) < -tol && s(i) < ss) {
        ss = s(i);
        ip = i;
      }
    }
    if (ip < 0) {
      res.status = QpStatus::kOptimal;
      break;
    }
    const Eigen::VectorXd np = qp.constraints.col(ip);
    u(iq) = 0.0;
    a[iq] = ip;

    bool added = false;
    bool infeasible = false;
    while (!added) {
      if (++iter > max_iterations) break;
      // Step 2a: primal and dual directions.
      d = j.transpose() * np;
      z = j.rightCols(n - iq) * d.tail(n - iq);
      if (iq > 0) {
        rr.head(iq) = r.topLeftCorner(iq, iq)
                          .triangularView<Eigen::Upper>()
                          .solve(d.head(iq));
      }
      // Step 2b: step lengths.
      double t1 = kInf;
      int l = -1;
      for (int k = 0; k < iq; ++k) {
        if (rr(k) > 0.0 && u(k) / rr(k) < t1) {
          t1 = u(k) / rr(k);
          l = a[k];
        }
      }
      double t2 = kInf;
      if (z.squaredNorm() > kEps) t2 = -s(ip) / z.dot(np);
      const double t = std::min(t1, t2);
      if (t >= kInf) {
        infeasible = true;
        break;
      }
      if (t2 >= kInf) {
        // Dual step only.
        u.head(iq) -= t * rr.head(iq);
        u(iq) += t;
        in_active[l] = false;
        DeleteConstraint(r, j, a, u, iq, l);
        continue;
      }
      x += t * z;
      u.head(iq) -= t * rr.head(iq);
      u(iq) += t;
      if (t == t2) {
        if (!AddConstraint(r, j, d, iq, r_norm)) {
          infeasible = true;
          break;
        }
        in_active[ip] = true;
        added = true;
      } else {
        in_active[l] = false;
        DeleteConstraint(r, j, a, u, iq, l);
        s(ip) = np.dot(x) + qp.offsets(ip);
      }
    }
    if (infeasible) {
      res.status = QpStatus::kInfeasible;
      break;
    }
    if (!added) {
      res.status = QpStatus::kMaxIterations;
      break;
    }
  }

  res.x = x;
  res.iterations = iter;
  for (int k = 0; k < iq; ++k) {
    res.active.push_back(a[k]);
    res.multipliers(a[k]) = u(k);
  }
  return res;
}

}  // namespace mpcil
