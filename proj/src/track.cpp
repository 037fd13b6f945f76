#include "mpcil/track.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "mpcil/errors.hpp"
#include "text_io.hpp"

namespace mpcil {

TrackSpec::TrackSpec(std::vector<TrackSegment> segments, double lane_width,
                     std::string name)
    : segments_(std::move(segments)),
      lane_width_(lane_width),
      total_length_(0.0),
      name_(std::move(name)) {
  if (segments_.empty()) throw InvalidSpecError("track has no segments");
  if (!(lane_width_ > 0.0)) throw InvalidSpecError("lane width must be > 0");
  starts_.reserve(segments_.size());
  for (const auto& seg : segments_) {
    if (!(seg.length > 0.0)) {
      throw InvalidSpecError("track segment length must be > 0");
    }
    if (!(std::abs(seg.curvature) * half_width() < 1.0)) {
      throw InvalidSpecError(
          "segment curvature puts the Frenet singularity inside the lane");
    }
    starts_.push_back(total_length_);
    total_length_ += seg.length;
  }
}

double TrackSpec::CurvatureAt(double arc) const {
  double a = std::fmod(arc, total_length_);
  if (a < 0.0) a += total_length_;
  if (a >= total_length_) a -= total_length_;
  auto it = std::upper_bound(starts_.begin(), starts_.end(), a);
  const auto idx = static_cast<std::size_t>(it - starts_.begin()) - 1;
  return segments_[idx].curvature;
}

CurvaturePreview TrackSpec::Preview(double arc) const {
  CurvaturePreview out{};
  for (int i = 0; i < kPreviewSize; ++i) {
    out[i] = CurvatureAt(arc + kPreviewSpacing * i);
  }
  return out;
}

double TrackSpec::MaxAbsCurvature() const {
  double m = 0.0;
  for (const auto& seg : segments_) m = std::max(m, std::abs(seg.curvature));
  return m;
}

TrackSpec TrackSpec::Mirrored() const {
  auto segs = segments_;
  for (auto& seg : segs) seg.curvature = -seg.curvature;
  return TrackSpec(std::move(segs), lane_width_, name_ + "-mirrored");
}

TrackSpec DefaultTrack(double lane_width) {
  // (length m, radius m, direction); straights carry radius 0.
  struct Row {
    double length;
    double radius;
    int dir;
  };
  static constexpr Row kRows[] = {
      {60, 0, 0},   {90, 120, 1},   {80, 0, 0},  {110, 200, -1},
      {50, 0, 0},   {70, 60, 1},    {100, 0, 0}, {130, 250, -1},
      {70, 0, 0},   {80, 90, 1},    {40, 0, 0},  {95, 150, -1},
      {120, 0, 0},  {105, 75, 1},
  };
  std::vector<TrackSegment> segs;
  for (const auto& r : kRows) {
    segs.push_back({r.length, r.dir == 0 ? 0.0 : r.dir / r.radius});
  }
  std::ostringstream name;
  name << "default-w" << lane_width;
  return TrackSpec(std::move(segs), lane_width, name.str());
}

TrackSpec DefaultTrack(TrackPreset preset) {
  return DefaultTrack(preset == TrackPreset::kD1 ? 4.5 : 8.0);
}

TrackSpec StraightTrack(double length, double lane_width) {
  return TrackSpec({{length, 0.0}}, lane_width, "straight");
}

std::string FormatTrack(const TrackSpec& track) {
  std::ostringstream os;
  os << "# mpcil-track 1\n";
  os << "name=" << track.name() << "\n";
  os << "lane_width=" << text::FormatDouble(track.lane_width()) << "\n";
  os << "length_m,curvature_1pm\n";
  for (const auto& seg : track.segments()) {
    os << text::FormatDouble(seg.length) << ","
       << text::FormatDouble(seg.curvature) << "\n";
  }
  return os.str();
}

TrackSpec ParseTrack(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  int line_no = 0;
  std::string name = "custom";
  double lane_width = -1.0;
  bool seen_magic = false;
  bool in_table = false;
  std::vector<TrackSegment> segs;
  while (std::getline(is, line)) {
    ++line_no;
    line = text::Trim(line);
    if (line.empty()) continue;
    if (!seen_magic) {
      if (line != "# mpcil-track 1") {
        throw FormatError("expected '# mpcil-track 1' header", line_no);
      }
      seen_magic = true;
      continue;
    }
    if (line[0] == '#') continue;
    if (!in_table) {
      if (line == "length_m,curvature_1pm") {
        in_table = true;
        continue;
      }
      auto [key, value] = text::SplitKeyValue(line, line_no);
      if (key == "name") {
        name = value;
      } else if (key == "lane_width") {
        lane_width = text::ParseDouble(value, line_no);
      } else {
        throw FormatError("unknown track key '" + key + "'", line_no);
      }
      continue;
    }
    auto fields = text::SplitCsv(line);
    if (fields.size() != 2) {
      throw FormatError("expected 2 columns in segment row", line_no);
    }
    segs.push_back({text::ParseDouble(fields[0], line_no),
                    text::ParseDouble(fields[1], line_no)});
  }
  if (!seen_magic) throw FormatError("empty track file", line_no);
  if (!in_table) throw FormatError("missing segment table header", line_no);
  if (lane_width <= 0.0) throw FormatError("missing lane_width", line_no);
  try {
    return TrackSpec(std::move(segs), lane_width, name);
  } catch (const InvalidSpecError& e) {
    throw FormatError(e.what(), line_no);
  }
}

void SaveTrack(const std::string& path, const TrackSpec& track) {
  text::WriteFile(path, FormatTrack(track));
}

TrackSpec LoadTrack(const std::string& path) {
  return ParseTrack(text::ReadFile(path));
}

}  // namespace mpcil
