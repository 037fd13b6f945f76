#ifndef MPCIL_DATASETS_HPP_
#define MPCIL_DATASETS_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "mpcil/ocp.hpp"
#include "mpcil/track.hpp"
#include "mpcil/vehicle.hpp"

namespace mpcil {

enum class ExpertVariant { kD1ConstOffset, kD2CurvatureDependent };

const char* ExpertVariantName(ExpertVariant v);
ExpertVariant ParseExpertVariant(const std::string& name);

struct ExpertSpec {
  ExpertVariant variant = ExpertVariant::kD1ConstOffset;
  double d_bar_star = -0.4;  // m, D1 offset
  double r_off = 1.5;        // m, D2 offset toward the curve center
  double kappa0 = 1e-3;      // 1/m, smoothing of the D2 sign switch
  double noise_std = 0.05;   // m, stationary std of the reference jitter
  double noise_tau = 1.0;    // s, OU time constant
  std::uint64_t seed = 1;

  void Validate(double lane_width) const;
  // Noise-free reference for a curvature preview.
  double Reference(const CurvaturePreview& chi) const;
};

struct DemoTrajectory {
  double dt = kDefaultDt;
  std::vector<VehicleState> states;
  std::string track;
  int lap = 0;
  std::string variant;
  std::uint64_t seed = 0;
  double lane_width = 0.0;
  int id = 0;  // position in the dataset, used for deterministic ordering

  double duration() const { return dt * (static_cast<double>(states.size()) - 1); }
};

// Runs the expert MPC for `laps` consecutive laps starting at sigma = 0 and
// splits the run into one trajectory per lap (sigma reduced by the lap
// offset). Throws std::runtime_error if any expert solve fails.
std::vector<DemoTrajectory> GenerateDemos(const TrackSpec& track,
                                          const ExpertSpec& expert, int laps,
                                          const VehicleParams& vehicle = {});

// Expert OCP matching an ExpertSpec (D1 stage cost or D2 terminal cost).
OcpSpec ExpertOcp(std::shared_ptr<const TrackSpec> track,
                  const ExpertSpec& expert, const VehicleParams& vehicle = {});

// Demo file:
//   # mpcil-demo 1
//   dt=..., track=..., variant=..., seed=..., lane_width=..., lap=...
//   t,v_y,psi_dot,sigma,d,theta_e,delta
std::string FormatDemo(const DemoTrajectory& demo);
DemoTrajectory ParseDemo(const std::string& text);
void SaveDemos(const std::string& dir, const std::vector<DemoTrajectory>& demos);
// Loads every lap_*.csv in dir, sorted by file name.
std::vector<DemoTrajectory> LoadDemos(const std::string& dir);

// Linear interpolation onto a uniform grid of spacing dt.
DemoTrajectory Resample(const DemoTrajectory& demo, double dt);

// Consecutive windows of `duration` seconds (duration/dt + 1 samples) taken
// every `stride` seconds. Window ids are assigned in order.
std::vector<DemoTrajectory> SliceWindows(const std::vector<DemoTrajectory>& demos,
                                         double duration, double stride);

}  // namespace mpcil

#endif  // MPCIL_DATASETS_HPP_
