#include "mpcil/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>
#include <sstream>

#include "mpcil/closed_loop.hpp"
#include "mpcil/errors.hpp"
#include "text_io.hpp"

namespace mpcil {
namespace {

constexpr double kReferenceClip = 0.95;  // fraction of w/2

const char* kDemoColumns = "t,v_y,psi_dot,sigma,d,theta_e,delta";

}  // namespace

const char* ExpertVariantName(ExpertVariant v) {
  return v == ExpertVariant::kD1ConstOffset ? "d1" : "d2";
}

ExpertVariant ParseExpertVariant(const std::string& name) {
  if (name == "d1") return ExpertVariant::kD1ConstOffset;
  if (name == "d2") return ExpertVariant::kD2CurvatureDependent;
  throw InvalidSpecError("unknown expert variant '" + name + "'");
}

void ExpertSpec::Validate(double lane_width) const {
  const double half = 0.5 * lane_width;
  if (variant == ExpertVariant::kD1ConstOffset && !(std::abs(d_bar_star) < half)) {
    throw InvalidSpecError("|d_bar_star| must be < w/2");
  }
  if (variant == ExpertVariant::kD2CurvatureDependent && !(std::abs(r_off) < half)) {
    throw InvalidSpecError("r_off must be < w/2");
  }
  if (noise_std < 0.0 || !(noise_tau > 0.0) || !(kappa0 > 0.0)) {
    throw InvalidSpecError("noise_std >= 0, noise_tau > 0 and kappa0 > 0 required");
  }
}

double ExpertSpec::Reference(const CurvaturePreview& chi) const {
  if (variant == ExpertVariant::kD1ConstOffset) return d_bar_star;
  const double mean =
      std::accumulate(chi.begin(), chi.end(), 0.0) / static_cast<double>(chi.size());
  // The curve center lies at d = 1/kappa, so the inner side has sign(kappa).
  return r_off * std::tanh(mean / kappa0);
}

OcpSpec ExpertOcp(std::shared_ptr<const TrackSpec> track,
                  const ExpertSpec& expert, const VehicleParams& vehicle) {
  OcpSpec spec = MakeOcpSpec(std::move(track),
                             expert.variant == ExpertVariant::kD1ConstOffset
                                 ? CostVariant::kD1Stage
                                 : CostVariant::kD2Terminal);
  spec.vehicle = vehicle;
  return spec;
}

std::vector<DemoTrajectory> GenerateDemos(const TrackSpec& track,
                                          const ExpertSpec& expert, int laps,
                                          const VehicleParams& vehicle) {
  if (laps < 1) throw InvalidSpecError("laps must be >= 1");
  expert.Validate(track.lane_width());
  auto shared = std::make_shared<const TrackSpec>(track);
  const OcpSpec spec = ExpertOcp(shared, expert, vehicle);
  const double dt = spec.dt;
  const double half = track.half_width();
  const double lap_length = track.total_length();

  std::mt19937_64 rng(expert.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double decay = std::exp(-dt / expert.noise_tau);
  const double kick = expert.noise_std * std::sqrt(1.0 - decay * decay);
  double noise = expert.noise_std > 0.0 ? expert.noise_std * normal(rng) : 0.0;

  auto reference = [&](const VehicleState& s) {
    const double r = expert.Reference(LatentQ(track, s)) + noise;
    return std::clamp(r, -kReferenceClip * half, kReferenceClip * half);
  };

  VehicleState s = VehicleState::Zero();
  s(kD) = std::clamp(expert.Reference(track.Preview(0.0)), -kReferenceClip * half,
                     kReferenceClip * half);
  std::vector<VehicleState> run{s};
  std::optional<PrimalDualSolution> warm;
  const double end = laps * lap_length;
  for (int t = 0; s(kSigma) < end; ++t) {
    const double r = reference(s);
    const ThetaVector theta = spec.variant == CostVariant::kD1Stage
                                  ? ThetaVector::D1(1.0, 1.0, 1.0, r)
                                  : ThetaVector::D2(r);
    MpcOutput out = MpcControl(spec, s, theta, warm ? &*warm : nullptr);
    if (!out.solution.converged || out.solution.relaxed) {
      throw std::runtime_error("expert solve failed at step " + std::to_string(t));
    }
    warm = ShiftWarmStart(out.solution, out.nlp);
    s = StepRk4(s, out.action, vehicle, track, dt);
    run.push_back(s);
    if (expert.noise_std > 0.0) noise = decay * noise + kick * normal(rng);
  }

  std::vector<DemoTrajectory> demos(laps);
  for (int k = 0; k < laps; ++k) {
    demos[k].dt = dt;
    demos[k].track = track.name();
    demos[k].lap = k;
    demos[k].variant = ExpertVariantName(expert.variant);
    demos[k].seed = expert.seed;
    demos[k].lane_width = track.lane_width();
    demos[k].id = k;
  }
  for (const VehicleState& x : run) {
    const int k = static_cast<int>(std::floor(x(kSigma) / lap_length));
    if (k < 0 || k >= laps) continue;
    VehicleState y = x;
    y(kSigma) -= k * lap_length;
    demos[k].states.push_back(y);
  }
  return demos;
}

std::string FormatDemo(const DemoTrajectory& demo) {
  std::ostringstream os;
  os << "# mpcil-demo 1\n"
     << "dt=" << text::FormatDouble(demo.dt) << "\n"
     << "track=" << demo.track << "\n"
     << "variant=" << demo.variant << "\n"
     << "seed=" << demo.seed << "\n"
     << "lane_width=" << text::FormatDouble(demo.lane_width) << "\n"
     << "lap=" << demo.lap << "\n"
     << kDemoColumns << "\n";
  for (std::size_t i = 0; i < demo.states.size(); ++i) {
    const VehicleState& x = demo.states[i];
    os << text::FormatDouble(i * demo.dt);
    for (int j = 0; j < kNx; ++j) os << ',' << text::FormatDouble(x(j));
    os << '\n';
  }
  return os.str();
}

DemoTrajectory ParseDemo(const std::string& content) {
  std::istringstream is(content);
  std::string line;
  int line_no = 0;
  DemoTrajectory demo;
  bool header = false;
  bool columns = false;
  bool have_dt = false;
  while (std::getline(is, line)) {
    ++line_no;
    line = text::Trim(line);
    if (line.empty()) continue;
    if (!header) {
      if (line.rfind("# mpcil-demo", 0) != 0) {
        throw FormatError("missing '# mpcil-demo' header", line_no);
      }
      if (text::Trim(line.substr(12)) != "1") {
        throw FormatError("unsupported demo version", line_no);
      }
      header = true;
      continue;
    }
    if (!columns) {
      if (line == kDemoColumns) {
        columns = true;
        continue;
      }
      auto [key, value] = text::SplitKeyValue(line, line_no);
      if (key == "dt") {
        demo.dt = text::ParseDouble(value, line_no);
        have_dt = true;
      } else if (key == "track") {
        demo.track = value;
      } else if (key == "variant") {
        demo.variant = value;
      } else if (key == "seed") {
        demo.seed = static_cast<std::uint64_t>(text::ParseInt(value, line_no));
      } else if (key == "lane_width") {
        demo.lane_width = text::ParseDouble(value, line_no);
      } else if (key == "lap") {
        demo.lap = static_cast<int>(text::ParseInt(value, line_no));
      } else {
        throw FormatError("unknown demo key '" + key + "'", line_no);
      }
      continue;
    }
    const auto cells = text::SplitCsv(line);
    if (cells.size() != kNx + 1) {
      throw FormatError("expected 7 columns, got " + std::to_string(cells.size()),
                        line_no);
    }
    const double t = text::ParseDouble(cells[0], line_no);
    if (have_dt && std::abs(t - demo.dt * static_cast<double>(demo.states.size())) >
                       1e-6 * demo.dt) {
      throw FormatError("time column does not follow dt", line_no);
    }
    VehicleState x;
    for (int j = 0; j < kNx; ++j) x(j) = text::ParseDouble(cells[j + 1], line_no);
    demo.states.push_back(x);
  }
  // Writers terminate every row; a missing final newline means a cut file.
  if (!content.empty() && content.back() != '\n') {
    throw FormatError("truncated file (last line has no newline)", line_no);
  }
  if (!header) throw FormatError("empty demo file", line_no);
  if (!columns) throw FormatError("missing column header", line_no);
  if (!have_dt || !(demo.dt > 0.0)) throw FormatError("missing or invalid dt", line_no);
  if (demo.states.empty()) throw FormatError("demo has no samples", line_no);
  return demo;
}

void SaveDemos(const std::string& dir, const std::vector<DemoTrajectory>& demos) {
  std::filesystem::create_directories(dir);
  for (const auto& demo : demos) {
    char name[32];
    std::snprintf(name, sizeof(name), "lap_%03d.csv", demo.lap);
    text::WriteFile((std::filesystem::path(dir) / name).string(), FormatDemo(demo));
  }
}

std::vector<DemoTrajectory> LoadDemos(const std::string& dir) {
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("lap_", 0) == 0 && entry.path().extension() == ".csv") {
      files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end());
  std::vector<DemoTrajectory> demos;
  for (const auto& f : files) {
    try {
      demos.push_back(ParseDemo(text::ReadFile(f.string())));
    } catch (const FormatError& e) {
      throw FormatError(f.filename().string() + ": " + e.message(), e.line());
    }
    demos.back().id = static_cast<int>(demos.size()) - 1;
  }
  return demos;
}

DemoTrajectory Resample(const DemoTrajectory& demo, double dt) {
  if (!(dt > 0.0)) throw std::invalid_argument("dt must be > 0");
  DemoTrajectory out = demo;
  out.dt = dt;
  out.states.clear();
  if (demo.states.empty()) return out;
  const double end = demo.duration();
  const int n = static_cast<int>(std::floor(end / dt + 1e-9));
  for (int i = 0; i <= n; ++i) {
    const double pos = i * dt / demo.dt;
    int j = static_cast<int>(std::floor(pos + 1e-9));
    j = std::min<int>(j, static_cast<int>(demo.states.size()) - 1);
    const double f = std::max(0.0, pos - j);
    if (j + 1 >= static_cast<int>(demo.states.size()) || f < 1e-12) {
      out.states.push_back(demo.states[j]);
    } else {
      out.states.push_back((1.0 - f) * demo.states[j] + f * demo.states[j + 1]);
    }
  }
  return out;
}

std::vector<DemoTrajectory> SliceWindows(const std::vector<DemoTrajectory>& demos,
                                         double duration, double stride) {
  std::vector<DemoTrajectory> out;
  for (const auto& demo : demos) {
    const int len = static_cast<int>(std::lround(duration / demo.dt));
    const int step = std::max(1, static_cast<int>(std::lround(stride / demo.dt)));
    for (int start = 0; start + len < static_cast<int>(demo.states.size());
         start += step) {
      DemoTrajectory w = demo;
      w.states.assign(demo.states.begin() + start,
                      demo.states.begin() + start + len + 1);
      w.id = static_cast<int>(out.size());
      out.push_back(std::move(w));
    }
  }
  return out;
}

}  // namespace mpcil
