#ifndef MPCIL_TRAINER_HPP_
#define MPCIL_TRAINER_HPP_

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "mpcil/closed_loop.hpp"
#include "mpcil/datasets.hpp"
#include "mpcil/policy.hpp"

namespace mpcil {

struct TrainConfig {
  double horizon = 10.0;      // s, rollout length T
  double t_s = 5.0;           // s, start of the scored window
  int batch_size = 10;
  double lr_static = 1e-2;
  double lr_mlp = 1e-3;
  double lr_baseline = 1e-3;
  int epochs = 50;
  int patience = 5;            // epochs without validation improvement
  double min_improvement = 1e-4;  // relative
  std::uint64_t seed = 1;
  int threads = 1;             // parallel rollouts within a batch
  std::string log_path;        // CSV training log, optional
  std::string checkpoint_dir;  // per-epoch checkpoints, optional
  RolloutOptions rollout;      // duration/grad fields are set by the trainer

  void Validate() const;
  double LearningRate(PolicyKind kind) const;
  int ScoredStart() const;  // t_s in steps
  int Steps() const;        // T in steps
};

struct BpttResult {
  Eigen::VectorXd grad;  // d J / d raw params
  double loss = 0.0;     // sum over t = t_s..T of (d_t - d*_t)^2
  double loss_full = 0.0;  // same over t = 0..T
  Vec6 state_adjoint = Vec6::Zero();  // d J / d s_{t_s}
};

double ScoredLoss(const RolloutTape& tape, const DemoTrajectory& demo,
                  int start_step);

// Truncated recursion from t = T down to t = t_s. Throws std::invalid_argument
// on dt or length mismatch, or when the tape lacks gradients.
BpttResult BpttGradient(const RolloutTape& tape, const DemoTrajectory& demo,
                        int start_step);

struct AdamState {
  Eigen::VectorXd m;
  Eigen::VectorXd v;
  int t = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  explicit AdamState(int n = 0)
      : m(Eigen::VectorXd::Zero(n)), v(Eigen::VectorXd::Zero(n)) {}
};

void AdamStep(AdamState& state, Eigen::VectorXd& params,
              const Eigen::VectorXd& grad, double lr);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;  // mean scored J over the epoch's rollouts
  double val_loss = 0.0;    // mean scored J over validation trajectories
  double grad_norm = 0.0;   // last batch
  int active_set_flips = 0;
  int skipped = 0;          // degraded or aborted trajectories
};

struct LossReport {
  std::vector<EpochRecord> history;
  double initial_val_loss = 0.0;
  double best_val_loss = 0.0;
  int best_epoch = 0;
};

struct TrainResult {
  Policy policy;  // parameters with the best validation loss
  LossReport report;
};

// Mean scored loss of closed-loop rollouts started at each demo's s*_0.
double EvaluateImitation(const Policy& policy, const TrackSpec& track,
                         const std::vector<DemoTrajectory>& demos,
                         const TrainConfig& cfg);

// MPC-BCO: rollout from s*_0, BPTT, batch-mean gradient, Adam. Trajectories
// must already be sliced to at least cfg.horizon and sampled at the rollout
// dt (see Resample / SliceWindows). Works for every PolicyKind, so the
// baseline BCO uses the same loop.
TrainResult TrainBco(const Policy& init, const TrackSpec& track,
                     const std::vector<DemoTrajectory>& train,
                     const std::vector<DemoTrajectory>& val,
                     const TrainConfig& cfg);

struct SlConfig {
  double window = 2.0;  // s
  int batch_size = 32;
  double lr = 1e-3;
  int max_epochs = 500;
  int plateau_epochs = 10;
  double plateau_tol = 1e-4;  // relative improvement over plateau_epochs
  std::uint64_t seed = 1;
};

struct SlResult {
  Policy policy;  // parameters with the lowest epoch MSE
  std::vector<double> loss_history;  // MSE per epoch
};

// Supervised d_bar pretraining: input chi at the start of each 2 s window,
// target the demonstrated d at its end. Throws on an empty dataset.
SlResult PretrainSlDbar(const Policy& init, const TrackSpec& track,
                        const std::vector<DemoTrajectory>& demos,
                        const SlConfig& cfg);

}  // namespace mpcil

#endif  // MPCIL_TRAINER_HPP_
