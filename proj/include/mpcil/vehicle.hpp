#ifndef MPCIL_VEHICLE_HPP_
#define MPCIL_VEHICLE_HPP_

#include <Eigen/Dense>
#include <array>
#include <string>

#include "mpcil/dual.hpp"
#include "mpcil/errors.hpp"
#include "mpcil/track.hpp"

namespace mpcil {

inline constexpr int kNx = 6;

// Frenet-frame state layout: (v_y, psi_dot, sigma, d, theta_e, delta).
enum StateIndex : int {
  kVy = 0,
  kYawRate = 1,
  kSigma = 2,
  kD = 3,
  kThetaE = 4,
  kDelta = 5,
};

using VehicleState = Eigen::Matrix<double, kNx, 1>;
using Mat6 = Eigen::Matrix<double, kNx, kNx>;
using Vec6 = VehicleState;

inline VehicleState MakeState(double v_y, double psi_dot, double sigma,
                              double d, double theta_e, double delta) {
  VehicleState x;
  x << v_y, psi_dot, sigma, d, theta_e, delta;
  return x;
}

inline constexpr double kDefaultDt = 0.1;
inline constexpr double kSingularityMargin = 1e-6;

struct VehicleParams {
  double mass = 1380.0;                        // kg
  double yaw_inertia = 2420.0;                 // kg m^2
  double cornering_stiffness_front = 1.2e5;    // N/rad
  double cornering_stiffness_rear = 1.0e5;     // N/rad
  double dist_cg_front = 1.05;                 // m
  double dist_cg_rear = 1.61;                  // m
  double v_x = 50.0 / 3.6;                     // m/s

  void Validate() const;
};

// key=value lines, '#' comments; unknown keys are an error.
VehicleParams ParseVehicleParams(const std::string& text);
VehicleParams LoadVehicleParams(const std::string& path);
std::string FormatVehicleParams(const VehicleParams& p);

template <typename T>
using StateArray = std::array<T, kNx>;

// Continuous-time Frenet kinematics + linear single-track dynamics. Generic in
// the scalar so the same expressions serve doubles and dual numbers. kappa is
// a plain double: road curvature carries no derivative.
template <typename T>
StateArray<T> DynamicsT(const StateArray<T>& x, const T& u,
                        const VehicleParams& p, double kappa) {
  using std::cos;
  using std::sin;
  const double den_val = 1.0 - kappa * ValueOf(x[kD]);
  if (den_val <= kSingularityMargin) {
    throw SingularityError("Frenet singularity: 1 - kappa*d <= 1e-6");
  }
  const double cf = p.cornering_stiffness_front;
  const double cr = p.cornering_stiffness_rear;
  const double a = p.dist_cg_front;
  const double b = p.dist_cg_rear;
  const double m = p.mass;
  const double iz = p.yaw_inertia;
  const double vx = p.v_x;

  const T& vy = x[kVy];
  const T& r = x[kYawRate];
  const T st = sin(x[kThetaE]);
  const T ct = cos(x[kThetaE]);
  const T den = 1.0 - kappa * x[kD];
  const T sigma_dot = (vx * ct - vy * st) / den;

  StateArray<T> dx;
  dx[kVy] = (-(cf + cr) / (m * vx)) * vy +
            (-vx + (cr * b - cf * a) / (m * vx)) * r + (cf / m) * x[kDelta];
  dx[kYawRate] = ((cr * b - cf * a) / (iz * vx)) * vy +
                 (-(cf * a * a + cr * b * b) / (iz * vx)) * r +
                 (cf * a / iz) * x[kDelta];
  dx[kSigma] = sigma_dot;
  dx[kD] = vx * st - vy * ct;
  dx[kThetaE] = r - kappa * sigma_dot;
  dx[kDelta] = u;
  return dx;
}

// Classical RK4 step; kappa_at(sigma) is queried at every stage.
template <typename T, typename KappaFn>
StateArray<T> StepRk4T(const StateArray<T>& x, const T& u,
                       const VehicleParams& p, KappaFn&& kappa_at, double dt) {
  auto axpy = [](const StateArray<T>& base, const StateArray<T>& k,
                 double h) {
    StateArray<T> out;
    for (int i = 0; i < kNx; ++i) out[i] = base[i] + k[i] * h;
    return out;
  };
  const auto k1 = DynamicsT<T>(x, u, p, kappa_at(ValueOf(x[kSigma])));
  const auto x2 = axpy(x, k1, 0.5 * dt);
  const auto k2 = DynamicsT<T>(x2, u, p, kappa_at(ValueOf(x2[kSigma])));
  const auto x3 = axpy(x, k2, 0.5 * dt);
  const auto k3 = DynamicsT<T>(x3, u, p, kappa_at(ValueOf(x3[kSigma])));
  const auto x4 = axpy(x, k3, dt);
  const auto k4 = DynamicsT<T>(x4, u, p, kappa_at(ValueOf(x4[kSigma])));
  StateArray<T> out;
  for (int i = 0; i < kNx; ++i) {
    out[i] = x[i] + (k1[i] + k2[i] * 2.0 + k3[i] * 2.0 + k4[i]) * (dt / 6.0);
  }
  return out;
}

Vec6 Dynamics(const VehicleState& x, double u, const VehicleParams& p,
              double kappa);

// Analytic d(Dynamics)/dx with kappa held constant.
Mat6 DynamicsJacobian(const VehicleState& x, const VehicleParams& p,
                      double kappa);

// Plant step: kappa read from the track at each RK stage.
VehicleState StepRk4(const VehicleState& x, double u, const VehicleParams& p,
                     const TrackSpec& track, double dt = kDefaultDt);
// Model step with one curvature for the whole step.
VehicleState StepRk4(const VehicleState& x, double u, const VehicleParams& p,
                     double kappa, double dt = kDefaultDt);

struct StepJacobians {
  Mat6 dx;  // d x+ / d x
  Vec6 du;  // d x+ / d u
};

// Exact chain rule through the four RK stages with dkappa/dsigma = 0.
StepJacobians StepRk4Jacobians(const VehicleState& x, double u,
                               const VehicleParams& p, const TrackSpec& track,
                               double dt = kDefaultDt);
StepJacobians StepRk4Jacobians(const VehicleState& x, double u,
                               const VehicleParams& p, double kappa,
                               double dt = kDefaultDt);

// Hessian of lambda^T x+(x, u) over (x, u), 7x7, constant kappa.
Eigen::Matrix<double, 7, 7> StepRk4WeightedHessian(const VehicleState& x,
                                                   double u,
                                                   const VehicleParams& p,
                                                   double kappa, double dt,
                                                   const Vec6& lambda);

// a_y = dv_y/dt + v_x * psi_dot.
double LateralAcceleration(const VehicleState& x, const VehicleParams& p);

}  // namespace mpcil

#endif  // MPCIL_VEHICLE_HPP_
