#include "mpcil/vehicle.hpp"

#include <cmath>
#include <sstream>

#include "text_io.hpp"

namespace mpcil {
namespace {

StateArray<double> ToArray(const VehicleState& x) {
  StateArray<double> a;
  for (int i = 0; i < kNx; ++i) a[i] = x(i);
  return a;
}

VehicleState FromArray(const StateArray<double>& a) {
  VehicleState x;
  for (int i = 0; i < kNx; ++i) x(i) = a[i];
  return x;
}

template <typename KappaFn>
StepJacobians Rk4Jacobians(const VehicleState& x, double u,
                           const VehicleParams& p, KappaFn&& kappa_at,
                           double dt) {
  Vec6 e_delta = Vec6::Zero();
  e_delta(kDelta) = 1.0;  // df/du

  const double h = dt;
  const double kap1 = kappa_at(x(kSigma));
  const Vec6 k1 = Dynamics(x, u, p, kap1);
  const Mat6 a1 = DynamicsJacobian(x, p, kap1);
  const Mat6 k1_x = a1;
  const Vec6 k1_u = e_delta;

  const Vec6 x2 = x + 0.5 * h * k1;
  const double kap2 = kappa_at(x2(kSigma));
  const Vec6 k2 = Dynamics(x2, u, p, kap2);
  const Mat6 a2 = DynamicsJacobian(x2, p, kap2);
  const Mat6 k2_x = a2 * (Mat6::Identity() + 0.5 * h * k1_x);
  const Vec6 k2_u = a2 * (0.5 * h * k1_u) + e_delta;

  const Vec6 x3 = x + 0.5 * h * k2;
  const double kap3 = kappa_at(x3(kSigma));
  const Mat6 a3 = DynamicsJacobian(x3, p, kap3);
  const Vec6 k3 = Dynamics(x3, u, p, kap3);
  const Mat6 k3_x = a3 * (Mat6::Identity() + 0.5 * h * k2_x);
  const Vec6 k3_u = a3 * (0.5 * h * k2_u) + e_delta;

  const Vec6 x4 = x + h * k3;
  const double kap4 = kappa_at(x4(kSigma));
  const Mat6 a4 = DynamicsJacobian(x4, p, kap4);
  const Mat6 k4_x = a4 * (Mat6::Identity() + h * k3_x);
  const Vec6 k4_u = a4 * (h * k3_u) + e_delta;

  StepJacobians j;
  j.dx = Mat6::Identity() + (h / 6.0) * (k1_x + 2.0 * k2_x + 2.0 * k3_x + k4_x);
  j.du = (h / 6.0) * (k1_u + 2.0 * k2_u + 2.0 * k3_u + k4_u);
  return j;
}

}  // namespace

void VehicleParams::Validate() const {
  if (!(mass > 0 && yaw_inertia > 0 && cornering_stiffness_front > 0 &&
        cornering_stiffness_rear > 0 && dist_cg_front > 0 &&
        dist_cg_rear > 0 && v_x > 0)) {
    throw InvalidSpecError("vehicle parameters must be strictly positive");
  }
}

VehicleParams ParseVehicleParams(const std::string& text) {
  VehicleParams p;
  std::istringstream is(text);
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    line = text::Trim(line);
    if (line.empty() || line[0] == '#') continue;
    auto [key, value] = text::SplitKeyValue(line, line_no);
    const double v = text::ParseDouble(value, line_no);
    if (key == "mass") {
      p.mass = v;
    } else if (key == "yaw_inertia") {
      p.yaw_inertia = v;
    } else if (key == "cornering_stiffness_front") {
      p.cornering_stiffness_front = v;
    } else if (key == "cornering_stiffness_rear") {
      p.cornering_stiffness_rear = v;
    } else if (key == "dist_cg_front") {
      p.dist_cg_front = v;
    } else if (key == "dist_cg_rear") {
      p.dist_cg_rear = v;
    } else if (key == "v_x") {
      p.v_x = v;
    } else {
      throw FormatError("unknown vehicle key '" + key + "'", line_no);
    }
  }
  p.Validate();
  return p;
}

VehicleParams LoadVehicleParams(const std::string& path) {
  return ParseVehicleParams(text::ReadFile(path));
}

std::string FormatVehicleParams(const VehicleParams& p) {
  std::ostringstream os;
  os << "mass=" << text::FormatDouble(p.mass) << "\n"
     << "yaw_inertia=" << text::FormatDouble(p.yaw_inertia) << "\n"
     << "cornering_stiffness_front="
     << text::FormatDouble(p.cornering_stiffness_front) << "\n"
     << "cornering_stiffness_rear="
     << text::FormatDouble(p.cornering_stiffness_rear) << "\n"
     << "dist_cg_front=" << text::FormatDouble(p.dist_cg_front) << "\n"
     << "dist_cg_rear=" << text::FormatDouble(p.dist_cg_rear) << "\n"
     << "v_x=" << text::FormatDouble(p.v_x) << "\n";
  return os.str();
}

Vec6 Dynamics(const VehicleState& x, double u, const VehicleParams& p,
              double kappa) {
  return FromArray(DynamicsT<double>(ToArray(x), u, p, kappa));
}

Mat6 DynamicsJacobian(const VehicleState& x, const VehicleParams& p,
                      double kappa) {
  const double den = 1.0 - kappa * x(kD);
  if (den <= kSingularityMargin) {
    throw SingularityError("Frenet singularity: 1 - kappa*d <= 1e-6");
  }
  const double cf = p.cornering_stiffness_front;
  const double cr = p.cornering_stiffness_rear;
  const double a = p.dist_cg_front;
  const double b = p.dist_cg_rear;
  const double m = p.mass;
  const double iz = p.yaw_inertia;
  const double vx = p.v_x;
  const double vy = x(kVy);
  const double st = std::sin(x(kThetaE));
  const double ct = std::cos(x(kThetaE));
  const double num = vx * ct - vy * st;

  Mat6 j = Mat6::Zero();
  j(kVy, kVy) = -(cf + cr) / (m * vx);
  j(kVy, kYawRate) = -vx + (cr * b - cf * a) / (m * vx);
  j(kVy, kDelta) = cf / m;
  j(kYawRate, kVy) = (cr * b - cf * a) / (iz * vx);
  j(kYawRate, kYawRate) = -(cf * a * a + cr * b * b) / (iz * vx);
  j(kYawRate, kDelta) = cf * a / iz;

  const double ds_dvy = -st / den;
  const double ds_dd = num * kappa / (den * den);
  const double ds_dth = (-vx * st - vy * ct) / den;
  j(kSigma, kVy) = ds_dvy;
  j(kSigma, kD) = ds_dd;
  j(kSigma, kThetaE) = ds_dth;

  j(kD, kVy) = -ct;
  j(kD, kThetaE) = vx * ct + vy * st;

  j(kThetaE, kYawRate) = 1.0;
  j(kThetaE, kVy) = -kappa * ds_dvy;
  j(kThetaE, kD) = -kappa * ds_dd;
  j(kThetaE, kThetaE) = -kappa * ds_dth;
  return j;
}

VehicleState StepRk4(const VehicleState& x, double u, const VehicleParams& p,
                     const TrackSpec& track, double dt) {
  auto kappa_at = [&track](double s) { return track.CurvatureAt(s); };
  return FromArray(StepRk4T<double>(ToArray(x), u, p, kappa_at, dt));
}

VehicleState StepRk4(const VehicleState& x, double u, const VehicleParams& p,
                     double kappa, double dt) {
  auto kappa_at = [kappa](double) { return kappa; };
  return FromArray(StepRk4T<double>(ToArray(x), u, p, kappa_at, dt));
}

StepJacobians StepRk4Jacobians(const VehicleState& x, double u,
                               const VehicleParams& p, const TrackSpec& track,
                               double dt) {
  return Rk4Jacobians(
      x, u, p, [&track](double s) { return track.CurvatureAt(s); }, dt);
}

StepJacobians StepRk4Jacobians(const VehicleState& x, double u,
                               const VehicleParams& p, double kappa,
                               double dt) {
  return Rk4Jacobians(x, u, p, [kappa](double) { return kappa; }, dt);
}

Eigen::Matrix<double, 7, 7> StepRk4WeightedHessian(const VehicleState& x,
                                                   double u,
                                                   const VehicleParams& p,
                                                   double kappa, double dt,
                                                   const Vec6& lambda) {
  using Inner = Dual<double, 7>;
  using Outer = Dual<Inner, 7>;
  auto seed = [](double value, int dir) {
    Outer o;
    o.v.v = value;
    o.v.g[dir] = 1.0;
    o.g[dir].v = 1.0;
    return o;
  };
  StateArray<Outer> xs;
  for (int i = 0; i < kNx; ++i) xs[i] = seed(x(i), i);
  const Outer us = seed(u, 6);
  auto kappa_at = [kappa](double) { return kappa; };
  const auto next = StepRk4T<Outer>(xs, us, p, kappa_at, dt);

  Eigen::Matrix<double, 7, 7> h = Eigen::Matrix<double, 7, 7>::Zero();
  for (int r = 0; r < kNx; ++r) {
    if (lambda(r) == 0.0) continue;
    for (int i = 0; i < 7; ++i) {
      for (int j = 0; j < 7; ++j) h(i, j) += lambda(r) * next[r].g[i].g[j];
    }
  }
  return h;
}

double LateralAcceleration(const VehicleState& x, const VehicleParams& p) {
  // dv_y/dt does not depend on kappa.
  return Dynamics(x, 0.0, p, 0.0)(kVy) + p.v_x * x(kYawRate);
}

}  // namespace mpcil
