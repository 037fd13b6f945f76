#include "mpcil/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "mpcil/errors.hpp"
#include "text_io.hpp"

namespace mpcil {

int SafetyViolations(const std::vector<VehicleState>& states, double lane_width,
                     double tol) {
  const double limit = 0.5 * lane_width + tol;
  int n = 0;
  for (const auto& s : states) n += std::abs(s(kD)) > limit;
  return n;
}

double Comfort(const std::vector<VehicleState>& states, const VehicleParams& p,
               double dt) {
  double sum = 0.0;
  for (const auto& s : states) {
    const double ay = LateralAcceleration(s, p);
    sum += ay * ay * dt;
  }
  return sum;
}

double TimeToLaneCrossing(const TrackSpec& track, const VehicleState& s,
                          const VehicleParams& p, double dt) {
  const double half = track.half_width();
  const int max_steps = static_cast<int>(std::ceil(kTlcCap / dt - 1e-9));
  VehicleState x = s;
  for (int i = 0; i < max_steps; ++i) {
    VehicleState next;
    try {
      next = StepRk4(x, 0.0, p, track, dt);
    } catch (const SingularityError&) {
      return (x(kSigma) - s(kSigma)) / p.v_x;
    }
    const double a = std::abs(x(kD));
    const double b = std::abs(next(kD));
    if (b > half) {
      const double f = b > a ? std::clamp((half - a) / (b - a), 0.0, 1.0) : 0.0;
      const double arc = x(kSigma) + f * (next(kSigma) - x(kSigma)) - s(kSigma);
      return arc / p.v_x;
    }
    x = next;
  }
  return std::numeric_limits<double>::infinity();
}

std::vector<DemoTrajectory> SampleSubtrajectories(
    const std::vector<DemoTrajectory>& demos, int n, double horizon,
    std::uint64_t seed) {
  std::vector<std::pair<int, int>> candidates;  // (demo, start)
  for (std::size_t k = 0; k < demos.size(); ++k) {
    const int len = static_cast<int>(std::lround(horizon / demos[k].dt));
    for (int start = 0; start + len < static_cast<int>(demos[k].states.size());
         ++start) {
      candidates.emplace_back(static_cast<int>(k), start);
    }
  }
  if (candidates.empty()) {
    throw std::invalid_argument("no demonstration is long enough to sample from");
  }
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);
  std::vector<DemoTrajectory> out;
  for (int i = 0; i < n; ++i) {
    const auto [k, start] = candidates[pick(rng)];
    const int len = static_cast<int>(std::lround(horizon / demos[k].dt));
    DemoTrajectory w = demos[k];
    w.states.assign(demos[k].states.begin() + start,
                    demos[k].states.begin() + start + len + 1);
    w.id = i;
    out.push_back(std::move(w));
  }
  return out;
}

TrajectoryMetrics ScoreRollout(const RolloutTape& tape, const DemoTrajectory& demo,
                               const TrackSpec& track, int start_step,
                               const VehicleParams& p) {
  TrajectoryMetrics m;
  m.demo_id = demo.id;
  const int steps = tape.steps();
  int count = 0;
  for (int t = start_step; t <= steps; ++t) {
    const double e = tape.states[t](kD) - demo.states[t](kD);
    m.imitation_sum_sq += e * e;
    ++count;
  }
  m.imitation_rms = count > 0 ? std::sqrt(m.imitation_sum_sq / count) : 0.0;
  m.safety_violations = SafetyViolations(tape.states, track.lane_width());
  m.comfort = Comfort(tape.states, p, tape.dt);
  const std::vector<VehicleState> expert(demo.states.begin(),
                                         demo.states.begin() + steps + 1);
  m.expert_comfort = Comfort(expert, p, demo.dt);
  for (const auto& s : tape.states) {
    if (std::abs(s(kD)) <= track.half_width()) {
      m.tlc_min = std::min(m.tlc_min, TimeToLaneCrossing(track, s, p, tape.dt));
    } else {
      m.tlc_min = 0.0;
    }
  }
  for (const auto& f : tape.flags) m.nonconverged_steps += !f.converged;
  return m;
}

EvalReport EvaluatePolicy(const Policy& policy,
                          const std::vector<DemoTrajectory>& demos,
                          const TrackSpec& track, const EvalOptions& opts,
                          bool sample) {
  const std::vector<DemoTrajectory> windows =
      sample ? SampleSubtrajectories(demos, opts.n_subtraj, opts.horizon, opts.seed)
             : demos;
  RolloutOptions ro = opts.rollout;
  ro.duration = opts.horizon;
  ro.record_grads = false;
  const int start = static_cast<int>(std::lround(opts.t_s / ro.dt));

  EvalReport report;
  report.per_trajectory.resize(windows.size());
  const int n = static_cast<int>(windows.size());
  const int threads = std::max(1, std::min(opts.threads, n));
  auto work = [&](int i) {
    TrajectoryMetrics& m = report.per_trajectory[i];
    try {
      const RolloutTape tape =
          Rollout(policy, track, windows[i].states.front(), ro);
      m = ScoreRollout(tape, windows[i], track, start, ro.plant);
    } catch (const RolloutAbortedError&) {
      m.demo_id = windows[i].id;
      m.aborted = true;
    }
  };
  if (threads == 1) {
    for (int i = 0; i < n; ++i) work(i);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < threads; ++w) {
      pool.emplace_back([&, w] {
        for (int i = w; i < n; i += threads) work(i);
      });
    }
    for (auto& th : pool) th.join();
  }

  int done = 0;
  for (const auto& m : report.per_trajectory) {
    if (m.aborted) {
      ++report.failures;
      continue;
    }
    ++done;
    report.imitation_sum_sq += m.imitation_sum_sq;
    report.imitation_rms += m.imitation_rms;
    report.safety_violations += m.safety_violations;
    report.comfort += m.comfort;
    report.expert_comfort += m.expert_comfort;
    report.tlc_min = std::min(report.tlc_min, m.tlc_min);
    report.nonconverged_steps += m.nonconverged_steps;
  }
  if (done > 0) {
    report.imitation_sum_sq /= done;
    report.imitation_rms /= done;
    report.comfort /= done;
    report.expert_comfort /= done;
  }
  return report;
}

std::string FormatEvalReportCsv(const EvalReport& report) {
  std::ostringstream os;
  os << "trajectory,imitation_sum_sq,imitation_rms,safety_violations,comfort,"
        "expert_comfort,tlc_min,nonconverged_steps,aborted\n";
  auto row = [&](const std::string& name, double sq, double rms, int safety,
                 double comfort, double expert, double tlc, int nc, int aborted) {
    os << name << ',' << text::FormatDouble(sq) << ',' << text::FormatDouble(rms)
       << ',' << safety << ',' << text::FormatDouble(comfort) << ','
       << text::FormatDouble(expert) << ','
       << (std::isinf(tlc) ? std::string("inf") : text::FormatDouble(tlc)) << ','
       << nc << ',' << aborted << '\n';
  };
  for (const auto& m : report.per_trajectory) {
    row(std::to_string(m.demo_id), m.imitation_sum_sq, m.imitation_rms,
        m.safety_violations, m.comfort, m.expert_comfort, m.tlc_min,
        m.nonconverged_steps, m.aborted ? 1 : 0);
  }
  row("mean", report.imitation_sum_sq, report.imitation_rms,
      report.safety_violations, report.comfort, report.expert_comfort,
      report.tlc_min, report.nonconverged_steps, report.failures);
  return os.str();
}

}  // namespace mpcil
