#include "mpcil/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>
#include <stdexcept>

#include "text_io.hpp"

namespace mpcil {

std::shared_ptr<const TrackSpec> TrackForDemos(
    const std::vector<DemoTrajectory>& laps) {
  if (laps.empty()) throw std::invalid_argument("no demonstrations");
  return std::make_shared<const TrackSpec>(DefaultTrack(laps.front().lane_width));
}

PreparedData PrepareData(const std::vector<DemoTrajectory>& laps, double dt,
                         double horizon, double stride, int val_laps) {
  const int n = static_cast<int>(laps.size());
  if (val_laps < 0 || val_laps >= n) {
    throw std::invalid_argument("need at least one training lap");
  }
  PreparedData data;
  for (int i = 0; i < n; ++i) {
    DemoTrajectory lap = Resample(laps[i], dt);
    (i < n - val_laps ? data.train_laps : data.val_laps).push_back(std::move(lap));
  }
  data.train = SliceWindows(data.train_laps, horizon, stride);
  data.val = val_laps > 0 ? SliceWindows(data.val_laps, horizon, stride)
                          : data.train;
  return data;
}

Policy InitialPolicy(PolicyKind kind, std::shared_ptr<const TrackSpec> track,
                     std::uint64_t seed, bool squash_dbar) {
  switch (kind) {
    case PolicyKind::kStaticD1:
      return Policy::StaticD1(MakeOcpSpec(track, CostVariant::kD1Stage),
                              InitialStaticRaw());
    case PolicyKind::kMlpD2:
      return Policy::MlpD2(MakeOcpSpec(track, CostVariant::kD2Terminal),
                           MakeDbarNetwork(seed), squash_dbar);
    case PolicyKind::kBaseline:
      return Policy::Baseline(MakeBaselineNetwork(seed), *track,
                              BoxBounds{}.delta_rate_max);
  }
  throw std::invalid_argument("unknown policy kind");
}

std::vector<VehicleState> StressStarts(const TrackSpec& track, int n,
                                       std::uint64_t seed) {
  std::vector<std::pair<double, double>> entries;  // (arc, curvature)
  double arc = 0.0;
  double prev = track.segments().back().curvature;
  for (const auto& seg : track.segments()) {
    if (seg.curvature != 0.0 && prev == 0.0) entries.emplace_back(arc, seg.curvature);
    prev = seg.curvature;
    arc += seg.length;
  }
  if (entries.empty()) throw std::invalid_argument("track has no curves");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> lead(0.0, 20.0);
  std::vector<VehicleState> starts;
  for (int i = 0; i < n; ++i) {
    const auto [entry, kappa] = entries[i % entries.size()];
    double sigma = entry - lead(rng);
    if (sigma < 0.0) sigma += track.total_length();
    // The road turns toward sign(kappa); the outer side is the opposite one.
    const double d = -std::copysign(0.8 * track.half_width(), kappa);
    starts.push_back(MakeState(0.0, 0.0, sigma, d, 0.0, 0.0));
  }
  return starts;
}

std::string LapTraceCsv(const DemoTrajectory& demo, const RolloutTape& before,
                        const RolloutTape& after) {
  std::ostringstream os;
  os << "t,sigma_demo,d_demo,sigma_before,d_before,sigma_after,d_after\n";
  const std::size_t n = std::min(
      {demo.states.size(), before.states.size(), after.states.size()});
  for (std::size_t i = 0; i < n; ++i) {
    os << text::FormatDouble(i * demo.dt) << ','
       << text::FormatDouble(demo.states[i](kSigma)) << ','
       << text::FormatDouble(demo.states[i](kD)) << ','
       << text::FormatDouble(before.states[i](kSigma)) << ','
       << text::FormatDouble(before.states[i](kD)) << ','
       << text::FormatDouble(after.states[i](kSigma)) << ','
       << text::FormatDouble(after.states[i](kD)) << '\n';
  }
  return os.str();
}

}  // namespace mpcil
