#ifndef MPCIL_POLICY_HPP_
#define MPCIL_POLICY_HPP_

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mpcil/ocp.hpp"
#include "mpcil/sensitivity.hpp"
#include "mpcil/track.hpp"

namespace mpcil {

double Softplus(double z);
double Sigmoid(double z);
double InverseSoftplus(double y);

// Raw static parameters (W_d, W_theta, W_ddelta, d_bar), unconstrained.
using StaticRaw = Eigen::Vector4d;

struct StaticProjection {
  ThetaVector theta;
  Eigen::Vector4d jacobian;  // diagonal d theta / d raw
};

// W = softplus(raw), d_bar = (w/2) tanh(raw_d_bar).
StaticProjection ProjectStatic(const StaticRaw& raw, double lane_width);

// Raw values that project onto theta = (1, 1, 1, 0).
StaticRaw InitialStaticRaw();

enum class Activation { kRelu, kTanh };

// Fully connected network with a linear output layer. Parameters are stored
// flat, layer by layer: weight (row-major, out x in) then bias.
class Mlp {
 public:
  Mlp() = default;
  Mlp(std::vector<int> sizes, Activation hidden);

  const std::vector<int>& sizes() const { return sizes_; }
  Activation activation() const { return activation_; }
  int num_params() const { return static_cast<int>(params_.size()); }
  const Eigen::VectorXd& params() const { return params_; }
  Eigen::VectorXd& params() { return params_; }
  int input_size() const { return sizes_.front(); }

  // Uniform in +-1/sqrt(fan_in) for weights and biases.
  void InitUniform(std::uint64_t seed);

  struct Tape {
    std::vector<Eigen::VectorXd> inputs;  // input to each layer
    std::vector<Eigen::VectorXd> pre;     // pre-activation of each layer
  };

  // Scalar output of a single-output network.
  double Forward(const Eigen::VectorXd& x, Tape* tape = nullptr) const;

  struct Gradient {
    Eigen::VectorXd params;
    Eigen::VectorXd input;
  };
  // Throws std::invalid_argument when the tape does not match the network.
  Gradient Backward(const Tape& tape, double out_bar) const;

 private:
  std::vector<int> sizes_;
  Activation activation_ = Activation::kRelu;
  Eigen::VectorXd params_;
};

// 7 -> 50 -> 50 -> 1 with rectifiers; inputs are curvatures times 100.
Mlp MakeDbarNetwork(std::uint64_t seed);
// 13 -> 32 -> 32 -> 1 with tanh hidden units.
Mlp MakeBaselineNetwork(std::uint64_t seed);

inline constexpr double kCurvatureInputScale = 100.0;

enum class PolicyKind { kStaticD1, kMlpD2, kBaseline };

const char* PolicyKindName(PolicyKind kind);

struct PolicyStep {
  double action = 0.0;
  ThetaVector theta;  // MPC-facing parameters (empty for the baseline)
  double d_bar = 0.0;
  std::optional<PrimalDualSolution> solution;
  std::optional<NlpInstance> nlp;  // instance the solution belongs to
  bool converged = true;
  bool relaxed = false;
  // Filled when gradients are requested.
  Eigen::VectorXd da_draw;  // d action / d raw params
  Vec6 da_ds = Vec6::Zero();
};

// a = pi_{theta(chi)}(s). The MPC variants hold an OcpSpec; the baseline
// maps (s, chi) directly to a steering rate.
class Policy {
 public:
  static Policy StaticD1(OcpSpec spec, const StaticRaw& raw);
  static Policy MlpD2(OcpSpec spec, Mlp net, bool squash_dbar = true);
  static Policy Baseline(Mlp net, const TrackSpec& track, double u_max);

  PolicyKind kind() const { return kind_; }
  const Eigen::VectorXd& raw() const { return raw_; }
  void set_raw(const Eigen::VectorXd& raw);
  int num_params() const { return static_cast<int>(raw_.size()); }
  const OcpSpec& ocp() const { return spec_; }
  OcpSpec& mutable_ocp() { return spec_; }
  bool squash_dbar() const { return squash_dbar_; }
  void set_squash_dbar(bool squash) { squash_dbar_ = squash; }
  const Mlp& network() const { return net_; }

  // d_bar produced by the indirect controller (MLP-D2) or the static value.
  // With grad != nullptr, also returns d d_bar / d raw.
  double Dbar(const CurvaturePreview& chi, Eigen::VectorXd* grad = nullptr) const;
  ThetaVector Theta(const CurvaturePreview& chi) const;

  PolicyStep Act(const VehicleState& s, const CurvaturePreview& chi,
                 const PrimalDualSolution* warm, bool record_grads,
                 const SensitivityOptions& sens = {}) const;

  // Baseline input features.
  Eigen::VectorXd BaselineFeatures(const VehicleState& s,
                                   const CurvaturePreview& chi) const;

 private:
  PolicyKind kind_ = PolicyKind::kStaticD1;
  Eigen::VectorXd raw_;
  OcpSpec spec_;
  Mlp net_;
  bool squash_dbar_ = true;
  double lane_width_ = 0.0;
  double track_length_ = 0.0;
  double u_max_ = 0.0;
};

// Checkpoint text format:
//   mpcil-params 1
//   kind <static-d1|mlp-d2|baseline>
//   <name> <count> <v_1> ... <v_count>
// Arrays: "raw" (all kinds) and "sizes" for the networks; "squash" 0/1.
void SavePolicyParams(const std::string& path, const Policy& policy);
// Restores raw parameters (and the d_bar squash flag) into a policy of the
// matching kind and shape.
void LoadPolicyParams(const std::string& path, Policy& policy);
PolicyKind ReadCheckpointKind(const std::string& path);

}  // namespace mpcil

#endif  // MPCIL_POLICY_HPP_
