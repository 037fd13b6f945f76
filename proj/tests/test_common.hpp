#ifndef MPCIL_TESTS_TEST_COMMON_HPP_
#define MPCIL_TESTS_TEST_COMMON_HPP_

#include <memory>
#include <random>

#include "mpcil/closed_loop.hpp"
#include "mpcil/datasets.hpp"
#include "mpcil/ocp.hpp"
#include "mpcil/track.hpp"

namespace mpcil::testing {

inline std::shared_ptr<const TrackSpec> Share(TrackSpec t) {
  return std::make_shared<const TrackSpec>(std::move(t));
}

inline std::shared_ptr<const TrackSpec> Straight(double lane_width = 4.5) {
  return Share(StraightTrack(1000.0, lane_width));
}

inline double Uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline DemoTrajectory DemoFromTape(const RolloutTape& tape,
                                   const TrackSpec& track) {
  DemoTrajectory d;
  d.dt = tape.dt;
  d.states = tape.states;
  d.track = track.name();
  d.lane_width = track.lane_width();
  return d;
}

}  // namespace mpcil::testing

#endif  // MPCIL_TESTS_TEST_COMMON_HPP_
