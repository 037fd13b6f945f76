#include "mpcil/ocp.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

#include "mpcil/errors.hpp"
#include "mpcil/qp.hpp"

namespace mpcil {
namespace {

enum RowKind : int {
  kLaneUpper = 0,
  kLaneLower,
  kSteerUpper,
  kSteerLower,
  kVyUpper,
  kVyLower,
  kYawUpper,
  kYawLower,
  kRateUpper,
  kRateLower,
  kSlackNonneg,
  kNumKinds,
};

double InfNorm(const Eigen::VectorXd& v) {
  return v.size() == 0 ? 0.0 : v.lpNorm<Eigen::Infinity>();
}

// grad_w of lambda^T c(w) for the multiple-shooting equalities.
Eigen::VectorXd EqualityJacobianTransposeTimes(const NlpInstance& nlp,
                                               const NlpEvaluation& ev,
                                               const Eigen::VectorXd& lambda) {
  const int n = nlp.horizon();
  Eigen::VectorXd out = Eigen::VectorXd::Zero(nlp.num_primal());
  out.segment<kNx>(NlpInstance::XIndex(0, 0)) += lambda.segment<kNx>(0);
  for (int k = 0; k < n; ++k) {
    const Vec6 lam_next = lambda.segment<kNx>(kNx * (k + 1));
    out.segment<kNx>(NlpInstance::XIndex(k, 0)) += ev.a[k].transpose() * lam_next;
    out(NlpInstance::UIndex(k)) += ev.b[k].dot(lam_next);
    out.segment<kNx>(NlpInstance::XIndex(k + 1, 0)) -= lam_next;
  }
  return out;
}

Eigen::VectorXd InequalityJacobianTransposeTimes(const NlpInstance& nlp,
                                                 const Eigen::VectorXd& mu) {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(nlp.num_primal());
  const auto& rows = nlp.inequalities();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out(rows[i].i0) += rows[i].a0 * mu(i);
    if (rows[i].i1 >= 0) out(rows[i].i1) += rows[i].a1 * mu(i);
  }
  return out;
}

double Merit(const NlpInstance& nlp, const Eigen::VectorXd& w,
             const NlpEvaluation& ev, double nu) {
  return nlp.Objective(w) +
         nu * (ev.equality.lpNorm<1>() + ev.inequality.cwiseMax(0.0).sum());
}

Eigen::VectorXd ColdStartPrimal(const NlpInstance& nlp) {
  const auto& spec = nlp.spec();
  const int n = spec.horizon;
  Eigen::VectorXd w = Eigen::VectorXd::Zero(nlp.num_primal());
  for (int k = 0; k <= n; ++k) {
    VehicleState x = nlp.initial_state();
    x(kSigma) += k * spec.vehicle.v_x * spec.dt;
    w.segment<kNx>(NlpInstance::XIndex(k, 0)) = x;
  }
  return w;
}

// Clip box-bounded variables into their boxes (stages >= 1) and size slacks.
void ProjectPrimal(const NlpInstance& nlp, Eigen::VectorXd& w) {
  const auto& b = nlp.spec().bounds;
  const double half = nlp.spec().half_width();
  for (int k = 1; k <= nlp.horizon(); ++k) {
    auto clip = [&](int i, double lim) {
      double& v = w(NlpInstance::XIndex(k, i));
      v = std::clamp(v, -lim, lim);
    };
    clip(kDelta, b.delta_max);
    clip(kVy, b.v_y_max);
    clip(kYawRate, b.yaw_rate_max);
    if (nlp.relaxed()) {
      const double d = w(NlpInstance::XIndex(k, kD));
      w(nlp.SlackIndex(k)) = std::max(0.0, std::abs(d) - half) + 1e-3;
    } else {
      clip(kD, half);
    }
  }
  for (int k = 0; k < nlp.horizon(); ++k) {
    double& u = w(NlpInstance::UIndex(k));
    u = std::clamp(u, -b.delta_rate_max, b.delta_rate_max);
  }
}

// Condensed QP in (du_0..du_{N-1}, ds_1..ds_N). States are eliminated through
// dx_{k+1} = A_k dx_k + B_k du_k + (F_k - x_{k+1}), dx_0 = s0 - x_0.
struct Condensed {
  std::vector<Eigen::MatrixXd> g;  // dx_k = g[k] * du + offset[k]
  std::vector<Vec6> offset;
  DenseQp qp;
  int num_u = 0;
  int num_s = 0;
};

Condensed Condense(const NlpInstance& nlp,
                   const NlpEvaluation& ev, const Eigen::VectorXd& hdiag) {
  const int n = nlp.horizon();
  Condensed c;
  c.num_u = n;
  c.num_s = nlp.relaxed() ? n : 0;
  const int nv = c.num_u + c.num_s;

  c.g.assign(n + 1, Eigen::MatrixXd::Zero(kNx, n));
  c.offset.resize(n + 1);
  c.offset[0] = -ev.equality.segment<kNx>(0);
  for (int k = 0; k < n; ++k) {
    c.g[k + 1].leftCols(k) = ev.a[k] * c.g[k].leftCols(k);
    c.g[k + 1].col(k) = ev.b[k];
    c.offset[k + 1] = ev.a[k] * c.offset[k] + ev.equality.segment<kNx>(kNx * (k + 1));
  }

  c.qp.hessian = Eigen::MatrixXd::Zero(nv, nv);
  c.qp.gradient = Eigen::VectorXd::Zero(nv);
  for (int k = 0; k < n; ++k) {
    c.qp.hessian(k, k) += hdiag(NlpInstance::UIndex(k));
    c.qp.gradient(k) += ev.gradient(NlpInstance::UIndex(k));
  }
  for (int k = 0; k <= n; ++k) {
    const int base = NlpInstance::XIndex(k, 0);
    const Vec6 hx = hdiag.segment<kNx>(base);
    const int cols = std::min(k, n);
    if (cols == 0) continue;
    const Eigen::MatrixXd gk = c.g[k].leftCols(cols);
    c.qp.hessian.topLeftCorner(cols, cols).noalias() +=
        gk.transpose() * hx.asDiagonal() * gk;
    const Vec6 lin = hx.cwiseProduct(c.offset[k]) + ev.gradient.segment<kNx>(base);
    c.qp.gradient.head(cols).noalias() += gk.transpose() * lin;
  }
  for (int k = 1; k <= c.num_s; ++k) {
    const int idx = nlp.SlackIndex(k);
    c.qp.hessian(n + k - 1, n + k - 1) = hdiag(idx);
    c.qp.gradient(n + k - 1) = ev.gradient(idx);
  }

  // Row of dw = T v + t0 for primal index idx.
  auto add_row = [&](int idx, double coef, Eigen::Ref<Eigen::VectorXd> col,
                     double& t0_dot) {
    const int k = idx / (kNx + 1);
    const int i = idx % (kNx + 1);
    if (idx >= (kNx + 1) * n + kNx) {  // slack
      const int sk = idx - ((kNx + 1) * n + kNx);
      col(n + sk) += coef;
    } else if (i == kNx) {  // control
      col(k) += coef;
    } else {
      col.head(n) += coef * c.g[k].row(i).transpose();
      t0_dot += coef * c.offset[k](i);
    }
  };
  const auto& rows = nlp.inequalities();
  const int m = static_cast<int>(rows.size());
  c.qp.constraints = Eigen::MatrixXd::Zero(nv, m);
  c.qp.offsets.resize(m);
  for (int r = 0; r < m; ++r) {
    const auto& row = rows[r];
    Eigen::VectorXd col = Eigen::VectorXd::Zero(nv);
    double t0_dot = 0.0;
    add_row(row.i0, row.a0, col, t0_dot);
    if (row.i1 >= 0) add_row(row.i1, row.a1, col, t0_dot);
    // a.(w + dw) <= rhs  ->  -a.T v + (rhs - a.w - a.t0) >= 0
    c.qp.constraints.col(r) = -col;
    c.qp.offsets(r) = -ev.inequality(r) - t0_dot;
  }
  return c;
}

// Exact Hessian of the Lagrangian with respect to the primal variables,
// expressed in condensed coordinates (used only in HessianMode::kExact).
void AddDynamicsCurvature(const NlpInstance& nlp, const Eigen::VectorXd& w,
                          const Eigen::VectorXd& lambda, Condensed& c) {
  const int n = nlp.horizon();
  const auto& spec = nlp.spec();
  for (int k = 0; k < n; ++k) {
    const Vec6 lam = lambda.segment<kNx>(kNx * (k + 1));
    const auto hk = StepRk4WeightedHessian(
        w.segment<kNx>(NlpInstance::XIndex(k, 0)), w(NlpInstance::UIndex(k)),
        spec.vehicle, nlp.kappa()[k], spec.dt, lam);
    // [dx_k; du_k] = M v with M = [g_k ; e_k].
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(kNx + 1, n);
    m.topRows(kNx) = c.g[k];
    m(kNx, k) = 1.0;
    c.qp.hessian.topLeftCorner(n, n).noalias() += m.transpose() * hk * m;
    Eigen::Matrix<double, kNx + 1, 1> off;
    off.head<kNx>() = c.offset[k];
    off(kNx) = 0.0;
    c.qp.gradient.head(n).noalias() += m.transpose() * (hk * off);
  }
}

struct StepResult {
  Eigen::VectorXd dw;
  Eigen::VectorXd lambda;
  Eigen::VectorXd mu;
  QpStatus status = QpStatus::kInfeasible;
  int qp_iterations = 0;
};

StepResult ComputeStep(const NlpInstance& nlp, const Eigen::VectorXd& w,
                       const Eigen::VectorXd& lambda, const NlpEvaluation& ev) {
  const auto& opts = nlp.spec().solver;
  const int n = nlp.horizon();
  Eigen::VectorXd hdiag =
      nlp.hessian_diagonal().array() + opts.regularization;
  // Slacks only carry a linear cost. Without curvature the dual QP starts
  // from an unconstrained minimum near -penalty/regularization and loses
  // every digit of the step; a proximal term keeps it well scaled and does
  // not move the NLP solution.
  if (nlp.relaxed()) {
    for (int k = 1; k <= n; ++k) hdiag(nlp.SlackIndex(k)) = opts.lane_penalty;
  }

  Condensed c = Condense(nlp, ev, hdiag);
  QpResult qp;
  bool solved = false;
  if (opts.hessian == HessianMode::kExact) {
    Condensed exact = c;
    AddDynamicsCurvature(nlp, w, lambda, exact);
    qp = SolveQp(exact.qp);
    solved = qp.status != QpStatus::kNotConvex;
    if (solved) c = std::move(exact);
  }
  if (!solved) qp = SolveQp(c.qp);

  StepResult out;
  out.status = qp.status;
  out.qp_iterations = qp.iterations;
  if (qp.status != QpStatus::kOptimal) return out;

  out.dw = Eigen::VectorXd::Zero(nlp.num_primal());
  const Eigen::VectorXd du = qp.x.head(n);
  for (int k = 0; k <= n; ++k) {
    out.dw.segment<kNx>(NlpInstance::XIndex(k, 0)) = c.g[k] * du + c.offset[k];
  }
  for (int k = 0; k < n; ++k) out.dw(NlpInstance::UIndex(k)) = du(k);
  for (int k = 1; k <= c.num_s; ++k) {
    out.dw(nlp.SlackIndex(k)) = qp.x(n + k - 1);
  }
  out.mu = qp.multipliers;

  // Recover equality multipliers from stationarity of the full-space QP.
  Eigen::VectorXd model_grad = hdiag.cwiseProduct(out.dw) + ev.gradient;
  if (opts.hessian == HessianMode::kExact && solved) {
    for (int k = 0; k < n; ++k) {
      const Vec6 lam = lambda.segment<kNx>(kNx * (k + 1));
      const auto hk = StepRk4WeightedHessian(
          w.segment<kNx>(NlpInstance::XIndex(k, 0)),
          w(NlpInstance::UIndex(k)), nlp.spec().vehicle, nlp.kappa()[k],
          nlp.spec().dt, lam);
      model_grad.segment<kNx + 1>(NlpInstance::XIndex(k, 0)) +=
          hk * out.dw.segment<kNx + 1>(NlpInstance::XIndex(k, 0));
    }
  }
  const Eigen::VectorXd r = model_grad + InequalityJacobianTransposeTimes(nlp, out.mu);
  out.lambda = Eigen::VectorXd::Zero(nlp.num_equalities());
  out.lambda.segment<kNx>(kNx * n) = r.segment<kNx>(NlpInstance::XIndex(n, 0));
  for (int k = n - 1; k >= 1; --k) {
    out.lambda.segment<kNx>(kNx * k) =
        r.segment<kNx>(NlpInstance::XIndex(k, 0)) +
        ev.a[k].transpose() * out.lambda.segment<kNx>(kNx * (k + 1));
  }
  out.lambda.segment<kNx>(0) =
      -(r.segment<kNx>(NlpInstance::XIndex(0, 0)) +
        ev.a[0].transpose() * out.lambda.segment<kNx>(kNx));
  return out;
}

// J_c d for the multiple-shooting equalities.
Eigen::VectorXd EqualityJacobianTimes(const NlpInstance& nlp,
                                      const NlpEvaluation& ev,
                                      const Eigen::VectorXd& d) {
  const int n = nlp.horizon();
  Eigen::VectorXd out(nlp.num_equalities());
  out.segment<kNx>(0) = d.segment<kNx>(NlpInstance::XIndex(0, 0));
  for (int k = 0; k < n; ++k) {
    out.segment<kNx>(kNx * (k + 1)) =
        ev.a[k] * d.segment<kNx>(NlpInstance::XIndex(k, 0)) +
        ev.b[k] * d(NlpInstance::UIndex(k)) -
        d.segment<kNx>(NlpInstance::XIndex(k + 1, 0));
  }
  return out;
}

PrimalDualSolution Package(const NlpInstance& nlp, Eigen::VectorXd w,
                           Eigen::VectorXd lambda, Eigen::VectorXd mu) {
  PrimalDualSolution z;
  z.horizon = nlp.horizon();
  z.primal = std::move(w);
  z.lambda = std::move(lambda);
  z.mu = std::move(mu);
  z.relaxed = nlp.relaxed();
  return z;
}

PrimalDualSolution SolveFixedMode(const NlpInstance& nlp,
                                  Eigen::VectorXd w, Eigen::VectorXd lambda,
                                  Eigen::VectorXd mu, bool& qp_infeasible) {
  const auto& opts = nlp.spec().solver;
  qp_infeasible = false;
  SolverDiagnostics diag;
  diag.relaxed = nlp.relaxed();
  double nu = 1.0;

  PrimalDualSolution best;
  double best_res = std::numeric_limits<double>::infinity();

  for (int iter = 0;; ++iter) {
    NlpEvaluation ev = Evaluate(nlp, w);
    PrimalDualSolution cur = Package(nlp, w, lambda, mu);
    const double res = KktResidual(cur, nlp);
    if (res < best_res) {
      best_res = res;
      best = cur;
    }
    if (res <= opts.tolerance) {
      diag.converged = true;
      break;
    }
    if (iter >= opts.max_iterations) break;

    StepResult step = ComputeStep(nlp, w, lambda, ev);
    diag.qp_iterations += step.qp_iterations;
    if (step.status == QpStatus::kInfeasible) {
      qp_infeasible = true;
      break;
    }
    if (step.status != QpStatus::kOptimal) break;

    nu = std::max(nu, 1.1 * std::max(InfNorm(step.lambda), InfNorm(step.mu)));
    const double m0 = Merit(nlp, w, ev, nu);
    if (diag.merit_history.empty()) diag.merit_history.push_back(m0);
    const double viol =
        ev.equality.lpNorm<1>() + ev.inequality.cwiseMax(0.0).sum();
    const double slope = ev.gradient.dot(step.dw) - nu * viol;

    double alpha = 1.0;
    Eigen::VectorXd w_try;
    double m_try = 0.0;
    bool accepted = false;
    // Merit evaluation carries roundoff of order eps * (|m| + nu ||w||_1),
    // which dominates the Armijo decrease close to a solution at large sigma.
    // Full steps within that band are accepted.
    const double noise = 4.0 * std::numeric_limits<double>::epsilon() *
                         (std::abs(m0) + nu * w.lpNorm<1>());
    auto sufficient = [&](double m, double a) {
      return m <= m0 + 1e-4 * a * std::min(slope, 0.0) ||
             (a == 1.0 && m <= m0 + noise);
    };
    // Second-order correction against the Maratos effect: re-solve the QP
    // with the equality residual measured at the rejected full step.
    try {
      w_try = w + step.dw;
      const NlpEvaluation ev_full = Evaluate(nlp, w_try);
      m_try = Merit(nlp, w_try, ev_full, nu);
      if (!sufficient(m_try, 1.0) && ev.equality.lpNorm<Eigen::Infinity>() <
                                         1e-2 * (1.0 + InfNorm(step.dw))) {
        NlpEvaluation ev_soc = ev;
        ev_soc.equality =
            ev_full.equality - EqualityJacobianTimes(nlp, ev, step.dw);
        StepResult soc = ComputeStep(nlp, w, lambda, ev_soc);
        diag.qp_iterations += soc.qp_iterations;
        if (soc.status == QpStatus::kOptimal) {
          const Eigen::VectorXd w_soc = w + soc.dw;
          const double m_soc = Merit(nlp, w_soc, Evaluate(nlp, w_soc), nu);
          if (sufficient(m_soc, 1.0)) {
            w_try = w_soc;
            m_try = m_soc;
            accepted = true;
          }
        }
      }
    } catch (const SingularityError&) {
    }
    for (int ls = 0; ls < 40 && !accepted; ++ls) {
      w_try = w + alpha * step.dw;
      try {
        NlpEvaluation ev_try = Evaluate(nlp, w_try);
        m_try = Merit(nlp, w_try, ev_try, nu);
        if (sufficient(m_try, alpha)) {
          accepted = true;
          break;
        }
      } catch (const SingularityError&) {
        // step left the Frenet domain; shorten
      }
      alpha *= 0.5;
    }
    ++diag.iterations;
    if (!accepted) break;
    w = std::move(w_try);
    lambda += alpha * (step.lambda - lambda);
    mu += alpha * (step.mu - mu);
    diag.merit_history.push_back(m_try);
    diag.step_sizes.push_back(alpha);
  }

  PrimalDualSolution out = best;
  if (diag.converged) out = Package(nlp, w, lambda, mu);
  out.kkt_residual = KktResidual(out, nlp);
  out.converged = diag.converged;
  out.active_set.assign(out.mu.size(), false);
  int active = 0;
  for (int i = 0; i < out.mu.size(); ++i) {
    if (out.mu(i) > 1e-6) {
      out.active_set[i] = true;
      ++active;
    }
  }
  diag.kkt_residual = out.kkt_residual;
  diag.active_set_size = active;
  out.diagnostics = diag;
  return out;
}

}  // namespace

void OcpSpec::Validate() const {
  if (!track) throw InvalidSpecError("OcpSpec has no track");
  if (horizon < 2) throw InvalidSpecError("horizon must be >= 2");
  if (!(dt > 0.0)) throw InvalidSpecError("dt must be > 0");
  if (!(bounds.delta_max > 0 && bounds.delta_rate_max > 0 &&
        bounds.v_y_max > 0 && bounds.yaw_rate_max > 0)) {
    throw InvalidSpecError("box bounds must satisfy lower < upper");
  }
  if (!(cost_scale > 0.0)) throw InvalidSpecError("cost_scale must be > 0");
  if (d1_terminal_weight < 0.0) {
    throw InvalidSpecError("terminal weight must be >= 0");
  }
  vehicle.Validate();
}

OcpSpec MakeOcpSpec(std::shared_ptr<const TrackSpec> track,
                    CostVariant variant) {
  OcpSpec spec;
  spec.track = std::move(track);
  spec.variant = variant;
  return spec;
}

ThetaVector ThetaVector::D1(double w_d, double w_theta, double w_ddelta,
                            double d_bar) {
  ThetaVector t;
  t.variant = CostVariant::kD1Stage;
  t.values.resize(4);
  t.values << w_d, w_theta, w_ddelta, d_bar;
  return t;
}

ThetaVector ThetaVector::D2(double d_bar_terminal) {
  ThetaVector t;
  t.variant = CostVariant::kD2Terminal;
  t.values.resize(1);
  t.values << d_bar_terminal;
  return t;
}

NlpInstance::NlpInstance(OcpSpec spec, VehicleState s0, ThetaVector theta,
                         std::vector<double> kappa, bool relaxed)
    : spec_(std::move(spec)),
      s0_(s0),
      theta_(std::move(theta)),
      kappa_(std::move(kappa)),
      relaxed_(relaxed) {
  spec_.Validate();
  if (theta_.variant != spec_.variant ||
      theta_.size() != ThetaSize(spec_.variant)) {
    throw InvalidSpecError("theta does not match the cost variant");
  }
  if (static_cast<int>(kappa_.size()) != spec_.horizon) {
    throw InvalidSpecError("curvature profile length must equal the horizon");
  }
  num_primal_ = (kNx + 1) * spec_.horizon + kNx + (relaxed_ ? spec_.horizon : 0);
  BuildCost();
  BuildInequalities();
}

void NlpInstance::BuildCost() {
  const int n = spec_.horizon;
  const double c = spec_.cost_scale;
  q_ = Eigen::VectorXd::Zero(num_primal_);
  ref_ = Eigen::VectorXd::Zero(num_primal_);
  lin_ = Eigen::VectorXd::Zero(num_primal_);
  if (spec_.variant == CostVariant::kD1Stage) {
    const double w_d = theta_.values(0);
    const double w_th = theta_.values(1);
    const double w_u = theta_.values(2);
    const double d_bar = theta_.values(3);
    for (int k = 0; k < n; ++k) {
      q_(XIndex(k, kD)) = 2.0 * c * w_d;
      ref_(XIndex(k, kD)) = d_bar;
      q_(XIndex(k, kThetaE)) = 2.0 * c * w_th;
      q_(UIndex(k)) = 2.0 * c * w_u;
    }
    q_(XIndex(n, kD)) = 2.0 * c * spec_.d1_terminal_weight;
    ref_(XIndex(n, kD)) = d_bar;
  } else {
    for (int k = 0; k < n; ++k) {
      q_(XIndex(k, kThetaE)) = 2.0 * c;
      q_(UIndex(k)) = 2.0 * c;
    }
    q_(XIndex(n, kD)) = 2.0 * c;
    ref_(XIndex(n, kD)) = theta_.values(0);
  }
  if (relaxed_) {
    for (int k = 1; k <= n; ++k) lin_(SlackIndex(k)) = spec_.solver.lane_penalty;
  }
}

void NlpInstance::BuildInequalities() {
  const int n = spec_.horizon;
  const auto& b = spec_.bounds;
  const double half = spec_.half_width();
  inequalities_.clear();
  auto add = [&](int idx, double coef, double rhs, int stage, int kind,
                 int idx2 = -1, double coef2 = 0.0) {
    LinearInequality row;
    row.i0 = idx;
    row.a0 = coef;
    row.i1 = idx2;
    row.a1 = coef2;
    row.rhs = rhs;
    row.stage = stage;
    row.kind = kind;
    inequalities_.push_back(row);
  };
  for (int k = 1; k <= n; ++k) {
    if (relaxed_) {
      add(XIndex(k, kD), 1.0, half, k, kLaneUpper, SlackIndex(k), -1.0);
      add(XIndex(k, kD), -1.0, half, k, kLaneLower, SlackIndex(k), -1.0);
    } else {
      add(XIndex(k, kD), 1.0, half, k, kLaneUpper);
      add(XIndex(k, kD), -1.0, half, k, kLaneLower);
    }
    add(XIndex(k, kDelta), 1.0, b.delta_max, k, kSteerUpper);
    add(XIndex(k, kDelta), -1.0, b.delta_max, k, kSteerLower);
    add(XIndex(k, kVy), 1.0, b.v_y_max, k, kVyUpper);
    add(XIndex(k, kVy), -1.0, b.v_y_max, k, kVyLower);
    add(XIndex(k, kYawRate), 1.0, b.yaw_rate_max, k, kYawUpper);
    add(XIndex(k, kYawRate), -1.0, b.yaw_rate_max, k, kYawLower);
    if (relaxed_) add(SlackIndex(k), -1.0, 0.0, k, kSlackNonneg);
  }
  for (int k = 0; k < n; ++k) {
    add(UIndex(k), 1.0, b.delta_rate_max, k, kRateUpper);
    add(UIndex(k), -1.0, b.delta_rate_max, k, kRateLower);
  }
}

double NlpInstance::Objective(const Eigen::VectorXd& w) const {
  const Eigen::VectorXd e = w - ref_;
  return 0.5 * e.dot(q_.cwiseProduct(e)) + lin_.dot(w);
}

Eigen::VectorXd NlpInstance::ObjectiveGradient(const Eigen::VectorXd& w) const {
  return q_.cwiseProduct(w - ref_) + lin_;
}

Eigen::MatrixXd NlpInstance::ObjectiveGradientThetaJacobian(
    const Eigen::VectorXd& w) const {
  const int n = spec_.horizon;
  const double c = spec_.cost_scale;
  Eigen::MatrixXd j = Eigen::MatrixXd::Zero(num_primal_, num_theta());
  if (spec_.variant == CostVariant::kD1Stage) {
    const double w_d = theta_.values(0);
    const double d_bar = theta_.values(3);
    for (int k = 0; k < n; ++k) {
      j(XIndex(k, kD), 0) = 2.0 * c * (w(XIndex(k, kD)) - d_bar);
      j(XIndex(k, kThetaE), 1) = 2.0 * c * w(XIndex(k, kThetaE));
      j(UIndex(k), 2) = 2.0 * c * w(UIndex(k));
      j(XIndex(k, kD), 3) = -2.0 * c * w_d;
    }
    j(XIndex(n, kD), 3) = -2.0 * c * spec_.d1_terminal_weight;
  } else {
    j(XIndex(n, kD), 0) = -2.0 * c;
  }
  return j;
}

Eigen::VectorXd NlpInstance::InequalityValues(const Eigen::VectorXd& w) const {
  Eigen::VectorXd h(inequalities_.size());
  for (std::size_t i = 0; i < inequalities_.size(); ++i) {
    const auto& r = inequalities_[i];
    double v = r.a0 * w(r.i0) - r.rhs;
    if (r.i1 >= 0) v += r.a1 * w(r.i1);
    h(i) = v;
  }
  return h;
}

NlpInstance NlpInstance::WithTheta(const ThetaVector& theta) const {
  return NlpInstance(spec_, s0_, theta, kappa_, relaxed_);
}

NlpInstance NlpInstance::WithInitialState(const VehicleState& s0) const {
  return NlpInstance(spec_, s0, theta_, kappa_, relaxed_);
}

NlpInstance NlpInstance::WithRelaxation(bool relaxed) const {
  return NlpInstance(spec_, s0_, theta_, kappa_, relaxed);
}

NlpEvaluation Evaluate(const NlpInstance& nlp, const Eigen::VectorXd& w) {
  const auto& spec = nlp.spec();
  const int n = nlp.horizon();
  NlpEvaluation ev;
  ev.next.resize(n);
  ev.a.resize(n);
  ev.b.resize(n);
  ev.equality.resize(nlp.num_equalities());
  ev.equality.segment<kNx>(0) =
      w.segment<kNx>(NlpInstance::XIndex(0, 0)) - nlp.initial_state();
  for (int k = 0; k < n; ++k) {
    const VehicleState xk = w.segment<kNx>(NlpInstance::XIndex(k, 0));
    const double uk = w(NlpInstance::UIndex(k));
    const double kap = nlp.kappa()[k];
    ev.next[k] = StepRk4(xk, uk, spec.vehicle, kap, spec.dt);
    const auto jac = StepRk4Jacobians(xk, uk, spec.vehicle, kap, spec.dt);
    ev.a[k] = jac.dx;
    ev.b[k] = jac.du;
    ev.equality.segment<kNx>(kNx * (k + 1)) =
        ev.next[k] - w.segment<kNx>(NlpInstance::XIndex(k + 1, 0));
  }
  ev.gradient = nlp.ObjectiveGradient(w);
  ev.inequality = nlp.InequalityValues(w);
  return ev;
}

double KktResidualParts::Max() const {
  return std::max({stationarity, equality, inequality, dual_feasibility,
                   complementarity});
}

KktResidualParts KktResidualBreakdown(const PrimalDualSolution& z,
                                      const NlpInstance& nlp) {
  const NlpEvaluation ev = Evaluate(nlp, z.primal);
  KktResidualParts parts;
  const Eigen::VectorXd stat = ev.gradient +
                               EqualityJacobianTransposeTimes(nlp, ev, z.lambda) +
                               InequalityJacobianTransposeTimes(nlp, z.mu);
  parts.stationarity = InfNorm(stat);
  parts.equality = InfNorm(ev.equality);
  parts.inequality = ev.inequality.size() ? ev.inequality.maxCoeff() : 0.0;
  parts.inequality = std::max(parts.inequality, 0.0);
  parts.dual_feasibility = z.mu.size() ? std::max(0.0, -z.mu.minCoeff()) : 0.0;
  parts.complementarity = InfNorm(z.mu.cwiseProduct(ev.inequality));
  return parts;
}

double KktResidual(const PrimalDualSolution& z, const NlpInstance& nlp) {
  try {
    return KktResidualBreakdown(z, nlp).Max();
  } catch (const SingularityError&) {
    return std::numeric_limits<double>::infinity();
  }
}

NlpInstance Transcribe(const OcpSpec& spec, const VehicleState& s0,
                       const ThetaVector& theta,
                       const PrimalDualSolution* guess, bool relaxed) {
  spec.Validate();
  std::vector<double> kappa(spec.horizon);
  for (int k = 0; k < spec.horizon; ++k) {
    double sigma = s0(kSigma) + k * spec.vehicle.v_x * spec.dt;
    if (guess != nullptr && guess->horizon == spec.horizon) {
      sigma = s0(kSigma) + guess->state(k)(kSigma) - guess->state(0)(kSigma);
    }
    kappa[k] = spec.track->CurvatureAt(sigma);
  }
  return NlpInstance(spec, s0, theta, std::move(kappa), relaxed);
}

PrimalDualSolution Solve(const NlpInstance& nlp,
                         const PrimalDualSolution* warm) {
  const auto t0 = std::chrono::steady_clock::now();
  auto initial = [&](const NlpInstance& inst, Eigen::VectorXd& w,
                     Eigen::VectorXd& lambda, Eigen::VectorXd& mu) {
    w = ColdStartPrimal(inst);
    lambda = Eigen::VectorXd::Zero(inst.num_equalities());
    mu = Eigen::VectorXd::Zero(inst.num_inequalities());
    if (warm != nullptr && warm->horizon == inst.horizon()) {
      const int core = (kNx + 1) * inst.horizon() + kNx;
      w.head(core) = warm->primal.head(core);
      if (warm->lambda.size() == lambda.size()) lambda = warm->lambda;
      if (warm->relaxed == inst.relaxed() && warm->mu.size() == mu.size()) {
        mu = warm->mu;
        if (inst.relaxed()) w.tail(inst.horizon()) = warm->primal.tail(inst.horizon());
      }
    }
    ProjectPrimal(inst, w);
  };

  Eigen::VectorXd w, lambda, mu;
  initial(nlp, w, lambda, mu);
  bool qp_infeasible = false;
  PrimalDualSolution sol = SolveFixedMode(nlp, w, lambda, mu, qp_infeasible);
  if (qp_infeasible) {
    if (nlp.relaxed() || !nlp.spec().solver.allow_relaxation) {
      throw InfeasibleStartError("QP subproblem infeasible");
    }
    const NlpInstance relaxed = nlp.WithRelaxation(true);
    initial(relaxed, w, lambda, mu);
    sol = SolveFixedMode(relaxed, w, lambda, mu, qp_infeasible);
    if (qp_infeasible) {
      throw InfeasibleStartError(
          "lane relaxation could not restore a feasible QP");
    }
  }
  sol.diagnostics.solve_time_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
          .count();
  return sol;
}

PrimalDualSolution ShiftWarmStart(const PrimalDualSolution& sol,
                                  const NlpInstance& nlp) {
  const int n = nlp.horizon();
  PrimalDualSolution out = sol;
  for (int k = 0; k < n; ++k) {
    out.primal.segment<kNx>(NlpInstance::XIndex(k, 0)) =
        sol.primal.segment<kNx>(NlpInstance::XIndex(k + 1, 0));
  }
  for (int k = 0; k + 1 < n; ++k) {
    out.primal(NlpInstance::UIndex(k)) = sol.primal(NlpInstance::UIndex(k + 1));
  }
  if (nlp.relaxed()) {
    for (int k = 1; k < n; ++k) {
      out.primal(nlp.SlackIndex(k)) = sol.primal(nlp.SlackIndex(k + 1));
    }
  }
  for (int k = 0; k < n; ++k) {
    out.lambda.segment<kNx>(kNx * k) = sol.lambda.segment<kNx>(kNx * (k + 1));
  }
  // Multipliers of the row with the same kind one stage later.
  const auto& rows = nlp.inequalities();
  std::vector<int> lookup(static_cast<std::size_t>(kNumKinds) * (n + 2), -1);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    lookup[rows[i].kind * (n + 2) + rows[i].stage] = static_cast<int>(i);
  }
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const int j = lookup[rows[i].kind * (n + 2) + rows[i].stage + 1];
    out.mu(i) = j >= 0 ? sol.mu(j) : sol.mu(i);
  }
  out.converged = false;
  return out;
}

MpcOutput MpcControl(const OcpSpec& spec, const VehicleState& s0,
                     const ThetaVector& theta, const PrimalDualSolution* warm) {
  NlpInstance nlp = Transcribe(spec, s0, theta, warm);
  PrimalDualSolution sol = Solve(nlp, warm);
  if (sol.relaxed) nlp = nlp.WithRelaxation(true);
  if (sol.converged) {
    NlpInstance refreshed = Transcribe(spec, s0, theta, &sol, nlp.relaxed());
    if (refreshed.kappa() != nlp.kappa()) {
      PrimalDualSolution again = Solve(refreshed, &sol);
      nlp = again.relaxed ? refreshed.WithRelaxation(true) : refreshed;
      sol = std::move(again);
    }
  }
  return MpcOutput{sol.first_control(), std::move(sol), std::move(nlp)};
}

}  // namespace mpcil
