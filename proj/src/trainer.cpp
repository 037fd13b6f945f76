#include "mpcil/trainer.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <stdexcept>
#include <thread>

#include "mpcil/errors.hpp"
#include "text_io.hpp"

namespace mpcil {
namespace {

int ToSteps(double seconds, double dt) {
  return static_cast<int>(std::lround(seconds / dt));
}

struct RolloutJob {
  std::optional<RolloutTape> tape;
  std::string error;
};

// Runs fn(i) for i in [0, n) on up to `threads` workers. Results are written by
// index, so the outcome does not depend on scheduling.
template <typename Fn>
void ParallelFor(int n, int threads, Fn&& fn) {
  threads = std::max(1, std::min(threads, n));
  if (threads == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  for (int w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      for (int i = w; i < n; i += threads) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

std::vector<RolloutJob> RunRollouts(const Policy& policy, const TrackSpec& track,
                                    const std::vector<const DemoTrajectory*>& demos,
                                    const RolloutOptions& opts, int threads) {
  std::vector<RolloutJob> jobs(demos.size());
  ParallelFor(static_cast<int>(demos.size()), threads, [&](int i) {
    try {
      jobs[i].tape = Rollout(policy, track, demos[i]->states.front(), opts);
    } catch (const RolloutAbortedError& e) {
      jobs[i].error = e.what();
    }
  });
  return jobs;
}

std::vector<int> ActiveSizes(const RolloutTape& tape) {
  std::vector<int> out;
  out.reserve(tape.diagnostics.size());
  for (const auto& d : tape.diagnostics) out.push_back(d.active_set_size);
  return out;
}

}  // namespace

void TrainConfig::Validate() const {
  if (!(t_s >= 0.0 && t_s < horizon)) {
    throw InvalidSpecError("training needs 0 <= t_s < T");
  }
  if (batch_size < 1) throw InvalidSpecError("batch_size must be >= 1");
  if (epochs < 0) throw InvalidSpecError("epochs must be >= 0");
}

double TrainConfig::LearningRate(PolicyKind kind) const {
  switch (kind) {
    case PolicyKind::kStaticD1:
      return lr_static;
    case PolicyKind::kMlpD2:
      return lr_mlp;
    case PolicyKind::kBaseline:
      return lr_baseline;
  }
  return lr_static;
}

int TrainConfig::ScoredStart() const { return ToSteps(t_s, rollout.dt); }
int TrainConfig::Steps() const { return ToSteps(horizon, rollout.dt); }

double ScoredLoss(const RolloutTape& tape, const DemoTrajectory& demo,
                  int start_step) {
  const int steps = tape.steps();
  if (static_cast<int>(demo.states.size()) < steps + 1) {
    throw std::invalid_argument("demo shorter than rollout");
  }
  double j = 0.0;
  for (int t = std::max(0, start_step); t <= steps; ++t) {
    const double e = tape.states[t](kD) - demo.states[t](kD);
    j += e * e;
  }
  return j;
}

BpttResult BpttGradient(const RolloutTape& tape, const DemoTrajectory& demo,
                        int start_step) {
  const int steps = tape.steps();
  if (std::abs(tape.dt - demo.dt) > 1e-12) {
    throw std::invalid_argument("demo dt does not match the rollout dt");
  }
  if (static_cast<int>(demo.states.size()) < steps + 1) {
    throw std::invalid_argument("demo shorter than rollout");
  }
  if (start_step < 0 || start_step > steps) {
    throw std::invalid_argument("t_s outside the rollout");
  }
  if (static_cast<int>(tape.plant_ds.size()) != steps ||
      tape.grad_start_step > start_step) {
    throw std::invalid_argument("tape was recorded without the needed gradients");
  }
  BpttResult r;
  r.loss = ScoredLoss(tape, demo, start_step);
  r.loss_full = ScoredLoss(tape, demo, 0);

  auto loss_grad = [&](int t) {
    Vec6 g = Vec6::Zero();
    g(kD) = 2.0 * (tape.states[t](kD) - demo.states[t](kD));
    return g;
  };
  r.grad = Eigen::VectorXd::Zero(tape.num_params);
  Vec6 adj = loss_grad(steps);
  for (int t = steps - 1; t >= start_step; --t) {
    const double a_bar = adj.dot(tape.plant_da[t]);
    r.grad += a_bar * tape.policy_draw[t];
    const Mat6 closed = tape.plant_ds[t] + tape.plant_da[t] * tape.policy_ds[t].transpose();
    adj = loss_grad(t) + closed.transpose() * adj;
  }
  r.state_adjoint = adj;
  return r;
}

void AdamStep(AdamState& s, Eigen::VectorXd& params, const Eigen::VectorXd& grad,
              double lr) {
  if (s.m.size() != params.size()) {
    s.m = Eigen::VectorXd::Zero(params.size());
    s.v = Eigen::VectorXd::Zero(params.size());
  }
  ++s.t;
  s.m = s.beta1 * s.m + (1.0 - s.beta1) * grad;
  s.v = s.beta2 * s.v + (1.0 - s.beta2) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(s.beta1, s.t);
  const double c2 = 1.0 - std::pow(s.beta2, s.t);
  params.array() -= lr * (s.m.array() / c1) / ((s.v.array() / c2).sqrt() + s.eps);
}

double EvaluateImitation(const Policy& policy, const TrackSpec& track,
                         const std::vector<DemoTrajectory>& demos,
                         const TrainConfig& cfg) {
  RolloutOptions opts = cfg.rollout;
  opts.duration = cfg.horizon;
  opts.record_grads = false;
  std::vector<const DemoTrajectory*> ptrs;
  for (const auto& d : demos) ptrs.push_back(&d);
  const auto jobs = RunRollouts(policy, track, ptrs, opts, cfg.threads);
  double sum = 0.0;
  int count = 0;
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    if (!jobs[i].tape) continue;
    sum += ScoredLoss(*jobs[i].tape, demos[i], cfg.ScoredStart());
    ++count;
  }
  return count > 0 ? sum / count : std::numeric_limits<double>::infinity();
}

TrainResult TrainBco(const Policy& init, const TrackSpec& track,
                     const std::vector<DemoTrajectory>& train,
                     const std::vector<DemoTrajectory>& val,
                     const TrainConfig& cfg) {
  cfg.Validate();
  if (train.empty()) throw InvalidSpecError("training set is empty");
  const int steps = cfg.Steps();
  for (const auto& d : train) {
    if (std::abs(d.dt - cfg.rollout.dt) > 1e-12 ||
        static_cast<int>(d.states.size()) < steps + 1) {
      throw std::invalid_argument("training trajectory not aligned with the rollout");
    }
  }
  RolloutOptions opts = cfg.rollout;
  opts.duration = cfg.horizon;
  opts.record_grads = true;
  opts.grad_start_step = cfg.ScoredStart();

  std::vector<int> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](int a, int b) { return train[a].id < train[b].id; });

  std::ofstream log;
  if (!cfg.log_path.empty()) {
    log.open(cfg.log_path);
    if (!log) throw std::runtime_error("cannot open " + cfg.log_path);
    log << "epoch,batch,train_J,val_J,grad_norm,active_set_flips\n";
  }
  if (!cfg.checkpoint_dir.empty()) {
    std::filesystem::create_directories(cfg.checkpoint_dir);
  }

  Policy policy = init;
  Eigen::VectorXd params = policy.raw();
  AdamState adam(policy.num_params());
  const double lr = cfg.LearningRate(policy.kind());
  std::mt19937_64 rng(cfg.seed);
  std::map<int, std::vector<int>> last_active;

  TrainResult result{policy, {}};
  const auto& val_set = val.empty() ? train : val;
  result.report.initial_val_loss = EvaluateImitation(policy, track, val_set, cfg);
  result.report.best_val_loss = result.report.initial_val_loss;
  int stale = 0;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<int> perm = order;
    std::shuffle(perm.begin(), perm.end(), rng);
    EpochRecord rec;
    rec.epoch = epoch;
    double loss_sum = 0.0;
    int loss_count = 0;
    const int num_batches =
        (static_cast<int>(perm.size()) + cfg.batch_size - 1) / cfg.batch_size;
    for (int b = 0; b < num_batches; ++b) {
      const int lo = b * cfg.batch_size;
      const int hi = std::min<int>(lo + cfg.batch_size, perm.size());
      std::vector<int> batch(perm.begin() + lo, perm.begin() + hi);
      std::sort(batch.begin(), batch.end(),
                [&](int x, int y) { return train[x].id < train[y].id; });
      std::vector<const DemoTrajectory*> demos;
      for (int i : batch) demos.push_back(&train[i]);
      const auto jobs = RunRollouts(policy, track, demos, opts, cfg.threads);

      Eigen::VectorXd grad = Eigen::VectorXd::Zero(params.size());
      int used = 0;
      double batch_loss = 0.0;
      int flips = 0;
      for (std::size_t i = 0; i < jobs.size(); ++i) {
        const DemoTrajectory& demo = *demos[i];
        if (!jobs[i].tape) {
          spdlog::warn("epoch {}: trajectory {} skipped: {}", epoch, demo.id,
                       jobs[i].error);
          ++rec.skipped;
          continue;
        }
        const RolloutTape& tape = *jobs[i].tape;
        std::vector<int> sizes = ActiveSizes(tape);
        auto prev = last_active.find(demo.id);
        if (prev != last_active.end()) {
          for (std::size_t t = 0; t < sizes.size() && t < prev->second.size(); ++t) {
            flips += sizes[t] != prev->second[t];
          }
        }
        last_active[demo.id] = std::move(sizes);
        if (tape.degraded) {
          spdlog::warn("epoch {}: trajectory {} skipped (degraded rollout)", epoch,
                       demo.id);
          ++rec.skipped;
          continue;
        }
        const BpttResult r = BpttGradient(tape, demo, cfg.ScoredStart());
        if (r.grad.size() == grad.size()) grad += r.grad;
        batch_loss += r.loss;
        ++used;
      }
      if (used == 0) continue;
      grad /= used;
      loss_sum += batch_loss;
      loss_count += used;
      rec.grad_norm = grad.norm();
      rec.active_set_flips += flips;
      AdamStep(adam, params, grad, lr);
      policy.set_raw(params);
      const bool last_batch = b + 1 == num_batches;
      if (log.is_open() && !last_batch) {
        log << epoch << ',' << b << ',' << text::FormatDouble(batch_loss / used)
            << ",," << text::FormatDouble(rec.grad_norm) << ',' << flips << '\n';
      }
      if (last_batch) {
        rec.val_loss = EvaluateImitation(policy, track, val_set, cfg);
        if (log.is_open()) {
          log << epoch << ',' << b << ',' << text::FormatDouble(batch_loss / used)
              << ',' << text::FormatDouble(rec.val_loss) << ','
              << text::FormatDouble(rec.grad_norm) << ',' << flips << '\n';
        }
      }
    }
    rec.train_loss = loss_count > 0 ? loss_sum / loss_count : 0.0;
    if (rec.val_loss == 0.0 && loss_count == 0) {
      rec.val_loss = EvaluateImitation(policy, track, val_set, cfg);
    }
    result.report.history.push_back(rec);
    spdlog::info("epoch {}: train J {:.6g}, val J {:.6g}, |g| {:.3g}", epoch,
                 rec.train_loss, rec.val_loss, rec.grad_norm);
    if (!cfg.checkpoint_dir.empty()) {
      char name[48];
      std::snprintf(name, sizeof(name), "epoch_%03d.params", epoch);
      SavePolicyParams((std::filesystem::path(cfg.checkpoint_dir) / name).string(),
                       policy);
    }
    const double best = result.report.best_val_loss;
    if (rec.val_loss < best * (1.0 - cfg.min_improvement)) {
      result.report.best_val_loss = rec.val_loss;
      result.report.best_epoch = epoch;
      result.policy = policy;
      stale = 0;
    } else if (++stale >= cfg.patience) {
      spdlog::info("early stop after epoch {}", epoch);
      break;
    }
  }
  return result;
}

SlResult PretrainSlDbar(const Policy& init, const TrackSpec& track,
                        const std::vector<DemoTrajectory>& demos,
                        const SlConfig& cfg) {
  if (init.kind() != PolicyKind::kMlpD2) {
    throw std::invalid_argument("SL pretraining needs an MLP-D2 policy");
  }
  std::vector<CurvaturePreview> inputs;
  std::vector<double> targets;
  for (const auto& demo : demos) {
    const int len = ToSteps(cfg.window, demo.dt);
    for (int start = 0; start + len < static_cast<int>(demo.states.size());
         start += len) {
      inputs.push_back(track.Preview(demo.states[start](kSigma)));
      targets.push_back(demo.states[start + len](kD));
    }
  }
  if (inputs.empty()) throw std::invalid_argument("SL dataset is empty");

  SlResult out{init, {}};
  Eigen::VectorXd params = init.raw();
  AdamState adam(init.num_params());
  std::mt19937_64 rng(cfg.seed);
  std::vector<int> idx(inputs.size());
  std::iota(idx.begin(), idx.end(), 0);

  auto mse = [&](const Policy& p) {
    double s = 0.0;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      const double e = p.Dbar(inputs[i]) - targets[i];
      s += e * e;
    }
    return s / inputs.size();
  };

  Policy policy = init;
  double best = mse(policy);
  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t lo = 0; lo < idx.size(); lo += cfg.batch_size) {
      const std::size_t hi = std::min(idx.size(), lo + cfg.batch_size);
      Eigen::VectorXd grad = Eigen::VectorXd::Zero(params.size());
      for (std::size_t k = lo; k < hi; ++k) {
        Eigen::VectorXd g;
        const double y = policy.Dbar(inputs[idx[k]], &g);
        grad += 2.0 * (y - targets[idx[k]]) * g;
      }
      grad /= static_cast<double>(hi - lo);
      AdamStep(adam, params, grad, cfg.lr);
      policy.set_raw(params);
    }
    out.loss_history.push_back(mse(policy));
    if (out.loss_history.back() < best) {
      best = out.loss_history.back();
      out.policy = policy;
    }
    const int n = static_cast<int>(out.loss_history.size());
    if (n > cfg.plateau_epochs) {
      const double before = out.loss_history[n - 1 - cfg.plateau_epochs];
      const double now = out.loss_history.back();
      if (before - now < cfg.plateau_tol * before) break;
    }
  }
  return out;
}

}  // namespace mpcil
