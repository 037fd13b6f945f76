#ifndef MPCIL_TRACK_HPP_
#define MPCIL_TRACK_HPP_

#include <array>
#include <string>
#include <vector>

namespace mpcil {

struct TrackSegment {
  double length = 0.0;     // m
  double curvature = 0.0;  // 1/m, positive turns toward +d
};

inline constexpr int kPreviewSize = 7;
inline constexpr double kPreviewSpacing = 5.0;  // m
using CurvaturePreview = std::array<double, kPreviewSize>;

enum class TrackPreset { kD1, kD2 };

// Closed lap of piecewise-constant-curvature segments. Immutable once built.
class TrackSpec {
 public:
  // Throws InvalidSpecError when a segment length is not positive, the lane
  // width is not positive, or |kappa| * w/2 >= 1 for some segment.
  TrackSpec(std::vector<TrackSegment> segments, double lane_width,
            std::string name = "custom");

  const std::vector<TrackSegment>& segments() const { return segments_; }
  double lane_width() const { return lane_width_; }
  double half_width() const { return 0.5 * lane_width_; }
  double total_length() const { return total_length_; }
  const std::string& name() const { return name_; }

  // Wraps arc modulo the lap length. On a boundary the downstream segment
  // wins.
  double CurvatureAt(double arc) const;

  // [kappa(arc), kappa(arc + 5), ..., kappa(arc + 30)].
  CurvaturePreview Preview(double arc) const;

  double MaxAbsCurvature() const;

  // Same geometry with every curvature negated.
  TrackSpec Mirrored() const;

 private:
  std::vector<TrackSegment> segments_;
  std::vector<double> starts_;  // cumulative start arc of each segment
  double lane_width_;
  double total_length_;
  std::string name_;
};

// 1200 m lap with seven curves of alternating direction separated by straights.
// kD1 uses a 4.5 m lane, kD2 an 8 m lane.
TrackSpec DefaultTrack(TrackPreset preset = TrackPreset::kD1);
TrackSpec DefaultTrack(double lane_width);

TrackSpec StraightTrack(double length, double lane_width);

// Plain-text track file:
//   # mpcil-track 1
//   name=<name>
//   lane_width=<m>
//   length_m,curvature_1pm
//   <length>,<curvature>
//   ...
void SaveTrack(const std::string& path, const TrackSpec& track);
TrackSpec LoadTrack(const std::string& path);
std::string FormatTrack(const TrackSpec& track);
TrackSpec ParseTrack(const std::string& text);

}  // namespace mpcil

#endif  // MPCIL_TRACK_HPP_
