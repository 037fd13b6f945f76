#include "mpcil/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include <Eigen/Core>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>

#include "mpcil/closed_loop.hpp"
#include "mpcil/datasets.hpp"
#include "mpcil/experiments.hpp"
#include "mpcil/integrity.hpp"
#include "mpcil/metrics.hpp"
#include "mpcil/trainer.hpp"
#include "text_io.hpp"

namespace mpcil {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;
constexpr int kExitCheckFailed = 3;

json Versions() {
  return {{"mpcil", kVersion},
          {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." +
                        std::to_string(EIGEN_MAJOR_VERSION) + "." +
                        std::to_string(EIGEN_MINOR_VERSION)},
          {"spdlog", std::to_string(SPDLOG_VER_MAJOR) + "." +
                         std::to_string(SPDLOG_VER_MINOR) + "." +
                         std::to_string(SPDLOG_VER_PATCH)},
          {"cli11", CLI11_VERSION},
          {"compiler", __VERSION__}};
}

void WriteManifest(const fs::path& path, const std::string& command,
                   const json& config, std::uint64_t seed,
                   const std::vector<std::string>& outputs) {
  json m;
  m["command"] = command;
  m["config"] = config;
  m["seed"] = seed;
  m["versions"] = Versions();
  m["outputs"] = outputs;
  text::WriteFile(path.string(), m.dump(2) + "\n");
}

// Manifest next to a file output: <file>.manifest.json.
fs::path ManifestFor(const fs::path& output) {
  return output.string() + ".manifest.json";
}

std::shared_ptr<const TrackSpec> ResolveTrack(
    const std::string& track_path, const std::vector<DemoTrajectory>& laps) {
  if (!track_path.empty()) {
    return std::make_shared<const TrackSpec>(LoadTrack(track_path));
  }
  return TrackForDemos(laps);
}

PolicyKind KindForVariant(const std::string& v) {
  if (v == "d1-static") return PolicyKind::kStaticD1;
  if (v == "d2-sl" || v == "d2-bco") return PolicyKind::kMlpD2;
  return PolicyKind::kBaseline;
}

Policy LoadPolicy(const std::string& path, std::shared_ptr<const TrackSpec> track) {
  Policy p = InitialPolicy(ReadCheckpointKind(path), track, 0);
  LoadPolicyParams(path, p);
  return p;
}

void WriteSolverLog(const fs::path& path,
                    const std::vector<RolloutTape>& tapes) {
  std::ostringstream os;
  os << "rollout,step,iterations,qp_iterations,kkt_residual,active_set_size,"
        "relaxed,converged,solve_time_ms\n";
  for (std::size_t r = 0; r < tapes.size(); ++r) {
    for (std::size_t t = 0; t < tapes[r].diagnostics.size(); ++t) {
      const SolverDiagnostics& d = tapes[r].diagnostics[t];
      os << r << ',' << t << ',' << d.iterations << ',' << d.qp_iterations << ','
         << text::FormatDouble(d.kkt_residual) << ',' << d.active_set_size << ','
         << d.relaxed << ',' << d.converged << ','
         << text::FormatDouble(d.solve_time_ms) << '\n';
    }
  }
  text::WriteFile(path.string(), os.str());
}

struct GenTrackArgs {
  std::string preset = "d1";
  double lane_width = 0.0;
  std::string out;
};

int RunGenTrack(const GenTrackArgs& a) {
  TrackSpec track = a.lane_width > 0.0
                        ? DefaultTrack(a.lane_width)
                        : DefaultTrack(a.preset == "d2" ? TrackPreset::kD2
                                                        : TrackPreset::kD1);
  SaveTrack(a.out, track);
  WriteManifest(ManifestFor(a.out), "gen-track",
                {{"preset", a.preset}, {"lane_width", track.lane_width()}}, 0,
                {a.out});
  std::cout << "wrote " << a.out << " (" << track.segments().size()
            << " segments, " << track.total_length() << " m)\n";
  return kExitOk;
}

struct GenDemosArgs {
  std::string variant = "d1";
  std::string track;
  int laps = 10;
  std::uint64_t seed = 1;
  double noise_std = 0.05;
  double d_bar = -0.4;
  double r_off = 1.5;
  std::string out;
};

int RunGenDemos(const GenDemosArgs& a) {
  ExpertSpec expert;
  expert.variant = ParseExpertVariant(a.variant);
  expert.seed = a.seed;
  expert.noise_std = a.noise_std;
  expert.d_bar_star = a.d_bar;
  expert.r_off = a.r_off;
  const TrackSpec track =
      !a.track.empty() ? LoadTrack(a.track)
                       : DefaultTrack(expert.variant == ExpertVariant::kD1ConstOffset
                                          ? TrackPreset::kD1
                                          : TrackPreset::kD2);
  const auto demos = GenerateDemos(track, expert, a.laps);
  SaveDemos(a.out, demos);
  WriteManifest(fs::path(a.out) / "manifest.json", "gen-demos",
                {{"variant", a.variant},
                 {"track", track.name()},
                 {"lane_width", track.lane_width()},
                 {"laps", a.laps},
                 {"noise_std", a.noise_std},
                 {"d_bar_star", a.d_bar},
                 {"r_off", a.r_off}},
                a.seed, {a.out});
  std::cout << "wrote " << demos.size() << " laps to " << a.out << "\n";
  return kExitOk;
}

struct TrainArgs {
  std::string variant;
  std::string demos;
  std::string out;
  std::string track;
  std::string init;
  int epochs = 50;
  int patience = 5;
  std::uint64_t seed = 1;
  int threads = 1;
  int batch = 10;
  double horizon = 10.0;
  double t_s = 5.0;
  double stride = 10.0;
  double lr = 0.0;  // 0: per-kind default
  int val_laps = 1;
  bool no_squash = false;
};

int RunTrain(const TrainArgs& a) {
  const auto laps = LoadDemos(a.demos);
  const auto track = ResolveTrack(a.track, laps);
  fs::create_directories(a.out);
  const int val_laps = laps.size() > 1 ? a.val_laps : 0;
  const PreparedData data = PrepareData(laps, kDefaultDt, a.horizon, a.stride, val_laps);
  const PolicyKind kind = KindForVariant(a.variant);

  Policy policy = InitialPolicy(kind, track, a.seed, !a.no_squash);
  if (!a.init.empty()) LoadPolicyParams(a.init, policy);
  policy.set_squash_dbar(policy.squash_dbar() && !a.no_squash);

  json config = {{"variant", a.variant}, {"demos", a.demos},
                 {"track", track->name()}, {"epochs", a.epochs},
                 {"horizon", a.horizon}, {"t_s", a.t_s},
                 {"batch", a.batch}, {"stride", a.stride},
                 {"val_laps", val_laps}, {"init", a.init},
                 {"dbar_squash", policy.squash_dbar()}};
  std::vector<std::string> outputs;
  const fs::path params = fs::path(a.out) / "final.params";

  if (a.variant == "d2-sl") {
    SlConfig sl;
    sl.seed = a.seed;
    sl.max_epochs = std::max(a.epochs, 1) * 10;
    if (a.lr > 0.0) sl.lr = a.lr;
    const SlResult r = PretrainSlDbar(policy, *track, data.train_laps, sl);
    SavePolicyParams(params.string(), r.policy);
    std::ostringstream log;
    log << "epoch,mse\n";
    for (std::size_t i = 0; i < r.loss_history.size(); ++i) {
      log << i << ',' << text::FormatDouble(r.loss_history[i]) << '\n';
    }
    const fs::path log_path = fs::path(a.out) / "sl_log.csv";
    text::WriteFile(log_path.string(), log.str());
    outputs = {params.string(), log_path.string()};
    config["lr"] = sl.lr;
    std::cout << "SL pretraining: " << r.loss_history.size()
              << " epochs, final MSE "
              << (r.loss_history.empty() ? 0.0 : r.loss_history.back()) << "\n";
  } else {
    TrainConfig cfg;
    cfg.horizon = a.horizon;
    cfg.t_s = a.t_s;
    cfg.batch_size = a.batch;
    cfg.epochs = a.epochs;
    cfg.patience = a.patience;
    cfg.seed = a.seed;
    cfg.threads = a.threads;
    if (a.lr > 0.0) {
      cfg.lr_static = cfg.lr_mlp = cfg.lr_baseline = a.lr;
    }
    cfg.log_path = (fs::path(a.out) / "train_log.csv").string();
    cfg.checkpoint_dir = (fs::path(a.out) / "checkpoints").string();
    const TrainResult r = TrainBco(policy, *track, data.train, data.val, cfg);
    SavePolicyParams(params.string(), r.policy);
    outputs = {params.string(), cfg.log_path, cfg.checkpoint_dir};
    config["lr"] = cfg.LearningRate(kind);
    std::cout << "trained " << r.report.history.size() << " epochs; val J "
              << r.report.initial_val_loss << " -> " << r.report.best_val_loss
              << " (best epoch " << r.report.best_epoch << ")\n";
    if (kind == PolicyKind::kStaticD1) {
      const auto proj = ProjectStatic(r.policy.raw(), track->lane_width());
      std::cout << "theta = " << proj.theta.values.transpose() << "\n";
    }
  }
  WriteManifest(fs::path(a.out) / "manifest.json", "train " + a.variant, config,
                a.seed, outputs);
  return kExitOk;
}

struct EvalArgs {
  std::string policy;
  std::string demos;
  std::string track;
  std::string out;
  std::string solver_log;
  int n_subtraj = 5;
  std::uint64_t seed = 1;
  double horizon = 10.0;
  double t_s = 5.0;
  int val_laps = 1;
};

int RunEval(const EvalArgs& a) {
  const auto laps = LoadDemos(a.demos);
  const auto track = ResolveTrack(a.track, laps);
  const Policy policy = LoadPolicy(a.policy, track);
  const int val_laps = laps.size() > 1 ? a.val_laps : 0;
  const PreparedData data = PrepareData(laps, kDefaultDt, a.horizon, a.horizon, val_laps);
  const auto& pool = val_laps > 0 ? data.val_laps : data.train_laps;

  EvalOptions opts;
  opts.n_subtraj = a.n_subtraj;
  opts.seed = a.seed;
  opts.horizon = a.horizon;
  opts.t_s = a.t_s;
  const auto windows = SampleSubtrajectories(pool, a.n_subtraj, a.horizon, a.seed);
  const EvalReport report = EvaluatePolicy(policy, windows, *track, opts, false);
  const std::string csv = FormatEvalReportCsv(report);
  std::vector<std::string> outputs;
  if (!a.out.empty()) {
    text::WriteFile(a.out, csv);
    outputs.push_back(a.out);
  } else {
    std::cout << csv;
  }
  if (!a.solver_log.empty()) {
    RolloutOptions ro;
    ro.duration = a.horizon;
    std::vector<RolloutTape> tapes;
    for (const auto& w : windows) {
      try {
        tapes.push_back(Rollout(policy, *track, w.states.front(), ro));
      } catch (const RolloutAbortedError& e) {
        spdlog::warn("{}", e.what());
      }
    }
    WriteSolverLog(a.solver_log, tapes);
    outputs.push_back(a.solver_log);
  }
  std::cout << "imitation " << report.imitation_sum_sq << " m^2 (rms "
            << report.imitation_rms << " m), safety " << report.safety_violations
            << ", comfort " << report.comfort << " (expert "
            << report.expert_comfort << "), tlc_min " << report.tlc_min
            << " s, failures " << report.failures << "\n";
  if (!a.out.empty()) {
    WriteManifest(ManifestFor(a.out), "eval",
                  {{"policy", a.policy}, {"demos", a.demos},
                   {"n_subtraj", a.n_subtraj}, {"horizon", a.horizon},
                   {"t_s", a.t_s}, {"val_laps", val_laps}},
                  a.seed, outputs);
  }
  return kExitOk;
}

struct PlotArgs {
  std::string demos;
  std::string track;
  std::string before;
  std::string after;
  std::string train_log;
  std::string out;
  int lap = 5;
};

int RunExportPlots(const PlotArgs& a) {
  const auto laps = LoadDemos(a.demos);
  const auto track = ResolveTrack(a.track, laps);
  const Policy after = LoadPolicy(a.after, track);
  const Policy before = a.before.empty()
                            ? InitialPolicy(after.kind(), track, 1, after.squash_dbar())
                            : LoadPolicy(a.before, track);
  auto it = std::find_if(laps.begin(), laps.end(),
                         [&](const DemoTrajectory& d) { return d.lap == a.lap; });
  if (it == laps.end()) {
    throw std::invalid_argument("lap " + std::to_string(a.lap) + " not in dataset");
  }
  const DemoTrajectory demo = Resample(*it, kDefaultDt);
  RolloutOptions ro;
  ro.duration = kDefaultDt * (static_cast<double>(demo.states.size()) - 1);
  const RolloutTape tb = Rollout(before, *track, demo.states.front(), ro);
  const RolloutTape ta = Rollout(after, *track, demo.states.front(), ro);
  fs::create_directories(a.out);
  std::vector<std::string> outputs;
  const fs::path trace = fs::path(a.out) / "lap_trace.csv";
  text::WriteFile(trace.string(), LapTraceCsv(demo, tb, ta));
  outputs.push_back(trace.string());
  if (!a.train_log.empty()) {
    // Loss curve: the validation rows of the training log.
    std::istringstream is(text::ReadFile(a.train_log));
    std::ostringstream os;
    os << "epoch,train_J,val_J\n";
    std::string line;
    std::getline(is, line);
    while (std::getline(is, line)) {
      const auto f = text::SplitCsv(line);
      if (f.size() >= 4 && !f[3].empty()) {
        os << f[0] << ',' << f[2] << ',' << f[3] << '\n';
      }
    }
    const fs::path curve = fs::path(a.out) / "loss_curve.csv";
    text::WriteFile(curve.string(), os.str());
    outputs.push_back(curve.string());
  }
  WriteManifest(fs::path(a.out) / "manifest.json", "export-plots",
                {{"demos", a.demos}, {"before", a.before}, {"after", a.after},
                 {"lap", a.lap}, {"train_log", a.train_log}},
                0, outputs);
  std::cout << "wrote " << outputs.size() << " plot files to " << a.out << "\n";
  return kExitOk;
}

int RunGradCheck(std::uint64_t seed, const std::string& out) {
  const IntegrityReport report = RunIntegritySuite(seed);
  std::cout << report.Format();
  if (!out.empty()) {
    std::ostringstream os;
    os << "check,value,bound,passed\n";
    for (const auto& c : report.checks) {
      os << c.name << ',' << text::FormatDouble(c.value) << ','
         << text::FormatDouble(c.threshold) << ',' << c.passed << '\n';
    }
    text::WriteFile(out, os.str());
    WriteManifest(ManifestFor(out), "grad-check", json::object(), seed, {out});
  }
  return report.AllPassed() ? kExitOk : kExitCheckFailed;
}

}  // namespace

int CliMain(int argc, char** argv) {
  CLI::App app{"Differentiable-MPC imitation learning for lane keeping"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  app.fallthrough();
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "trace|debug|info|warn|error|off")
      ->capture_default_str();

  GenTrackArgs gt;
  auto* cmd_track = app.add_subcommand("gen-track", "Write a default track file");
  cmd_track->add_option("--preset", gt.preset, "d1 (4.5 m lane) or d2 (8 m lane)")
      ->check(CLI::IsMember({"d1", "d2"}))
      ->capture_default_str();
  cmd_track->add_option("--lane-width", gt.lane_width, "Override the lane width [m]");
  cmd_track->add_option("--out", gt.out, "Output track file")->required();

  GenDemosArgs gd;
  auto* cmd_demos =
      app.add_subcommand("gen-demos", "Generate synthetic expert demonstrations");
  cmd_demos->add_option("--variant", gd.variant, "Expert variant: d1 or d2")
      ->check(CLI::IsMember({"d1", "d2"}))
      ->capture_default_str();
  cmd_demos->add_option("--track", gd.track, "Track file (default: preset track)");
  cmd_demos->add_option("--laps", gd.laps, "Number of laps")->capture_default_str();
  cmd_demos->add_option("--seed", gd.seed, "Noise seed")->capture_default_str();
  cmd_demos->add_option("--noise-std", gd.noise_std, "Reference jitter std [m]")
      ->capture_default_str();
  cmd_demos->add_option("--d-bar", gd.d_bar, "D1 offset [m]")->capture_default_str();
  cmd_demos->add_option("--r-off", gd.r_off, "D2 inner-radius offset [m]")
      ->capture_default_str();
  cmd_demos->add_option("--out", gd.out, "Output directory")->required();

  TrainArgs tr;
  auto* cmd_train = app.add_subcommand("train", "Train a policy");
  cmd_train->add_option("variant", tr.variant, "d1-static | d2-sl | d2-bco | baseline")
      ->required()
      ->check(CLI::IsMember({"d1-static", "d2-sl", "d2-bco", "baseline"}));
  cmd_train->add_option("--demos", tr.demos, "Demonstration directory")->required();
  cmd_train->add_option("--out", tr.out, "Output directory")->required();
  cmd_train->add_option("--track", tr.track, "Track file (default: from demos)");
  cmd_train->add_option("--init", tr.init, "Initial checkpoint (e.g. SL result)");
  cmd_train->add_option("--epochs", tr.epochs, "Epoch budget")->capture_default_str();
  cmd_train->add_option("--patience", tr.patience, "Early-stop patience")
      ->capture_default_str();
  cmd_train->add_option("--seed", tr.seed, "Seed")->capture_default_str();
  cmd_train->add_option("--threads", tr.threads, "Parallel rollouts")
      ->capture_default_str();
  cmd_train->add_option("--batch", tr.batch, "Trajectories per batch")
      ->capture_default_str();
  cmd_train->add_option("--horizon", tr.horizon, "Rollout length T [s]")
      ->capture_default_str();
  cmd_train->add_option("--t-s", tr.t_s, "Start of the scored window [s]")
      ->capture_default_str();
  cmd_train->add_option("--stride", tr.stride, "Window stride [s]")
      ->capture_default_str();
  cmd_train->add_option("--lr", tr.lr, "Learning rate (default per policy kind)");
  cmd_train->add_option("--val-laps", tr.val_laps, "Laps held out for validation")
      ->capture_default_str();
  cmd_train->add_flag("--no-dbar-squash", tr.no_squash,
                      "Use the raw network output as d_bar");

  EvalArgs ev;
  auto* cmd_eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  cmd_eval->add_option("--policy", ev.policy, "Checkpoint")->required();
  cmd_eval->add_option("--demos", ev.demos, "Demonstration directory")->required();
  cmd_eval->add_option("--track", ev.track, "Track file (default: from demos)");
  cmd_eval->add_option("--out", ev.out, "Report CSV (default: stdout)");
  cmd_eval->add_option("--solver-log", ev.solver_log, "Per-step solver CSV");
  cmd_eval->add_option("--n-subtraj", ev.n_subtraj, "Validation windows")
      ->capture_default_str();
  cmd_eval->add_option("--seed", ev.seed, "Sampling seed")->capture_default_str();
  cmd_eval->add_option("--horizon", ev.horizon, "Rollout length [s]")
      ->capture_default_str();
  cmd_eval->add_option("--t-s", ev.t_s, "Start of the scored window [s]")
      ->capture_default_str();
  cmd_eval->add_option("--val-laps", ev.val_laps, "Laps held out for validation")
      ->capture_default_str();

  PlotArgs pl;
  auto* cmd_plots = app.add_subcommand("export-plots", "Write lap-trace and loss CSVs");
  cmd_plots->add_option("--demos", pl.demos, "Demonstration directory")->required();
  cmd_plots->add_option("--track", pl.track, "Track file (default: from demos)");
  cmd_plots->add_option("--before", pl.before, "Checkpoint before training");
  cmd_plots->add_option("--after", pl.after, "Checkpoint after training")->required();
  cmd_plots->add_option("--train-log", pl.train_log, "train_log.csv for the loss curve");
  cmd_plots->add_option("--lap", pl.lap, "Lap to trace")->capture_default_str();
  cmd_plots->add_option("--out", pl.out, "Output directory")->required();

  std::uint64_t gc_seed = 7;
  std::string gc_out;
  auto* cmd_check =
      app.add_subcommand("grad-check", "Run the finite-difference and property suites");
  cmd_check->add_option("--seed", gc_seed, "Seed")->capture_default_str();
  cmd_check->add_option("--out", gc_out, "Result CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }
  spdlog::set_level(spdlog::level::from_str(log_level));

  try {
    if (cmd_track->parsed()) return RunGenTrack(gt);
    if (cmd_demos->parsed()) return RunGenDemos(gd);
    if (cmd_train->parsed()) return RunTrain(tr);
    if (cmd_eval->parsed()) return RunEval(ev);
    if (cmd_plots->parsed()) return RunExportPlots(pl);
    if (cmd_check->parsed()) return RunGradCheck(gc_seed, gc_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace mpcil
