#ifndef MPCIL_EXPERIMENTS_HPP_
#define MPCIL_EXPERIMENTS_HPP_

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "mpcil/closed_loop.hpp"
#include "mpcil/datasets.hpp"
#include "mpcil/policy.hpp"
#include "mpcil/track.hpp"

namespace mpcil {

// Plumbing shared by the CLI and the acceptance suite.

// Default track with the lane width recorded in the demonstrations.
std::shared_ptr<const TrackSpec> TrackForDemos(
    const std::vector<DemoTrajectory>& laps);

struct PreparedData {
  std::vector<DemoTrajectory> train_laps;
  std::vector<DemoTrajectory> val_laps;
  std::vector<DemoTrajectory> train;  // horizon-long windows
  std::vector<DemoTrajectory> val;
};

// Resamples the laps to dt, holds out the last val_laps laps and slices both
// parts into windows of `horizon` seconds every `stride` seconds. With
// val_laps = 0 the validation windows are the training windows.
PreparedData PrepareData(const std::vector<DemoTrajectory>& laps, double dt,
                         double horizon, double stride, int val_laps);

// Untrained policies: static D1 at theta = (1, 1, 1, 0), MLP-D2 and baseline
// networks with seeded uniform weights.
Policy InitialPolicy(PolicyKind kind, std::shared_ptr<const TrackSpec> track,
                     std::uint64_t seed, bool squash_dbar = true);

// n starts at |d| = 0.8 w/2 on the outer side, 0..20 m before a curve.
std::vector<VehicleState> StressStarts(const TrackSpec& track, int n,
                                       std::uint64_t seed);

// sigma,d columns for the demonstration and two rollouts from its start.
std::string LapTraceCsv(const DemoTrajectory& demo, const RolloutTape& before,
                        const RolloutTape& after);

}  // namespace mpcil

#endif  // MPCIL_EXPERIMENTS_HPP_
