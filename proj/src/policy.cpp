#include "mpcil/policy.hpp"

#include <cmath>
#include <random>
#include <sstream>
#include <stdexcept>

#include "mpcil/errors.hpp"
#include "text_io.hpp"

namespace mpcil {
namespace {

// Baseline feature scales for (v_y, psi_dot, sigma, d, theta_e, delta); sigma
// and d scales are filled per track.
constexpr double kThetaScale = 10.0;
constexpr double kDeltaScale = 10.0;

}  // namespace

double Softplus(double z) {
  // log(1 + e^z) without overflow.
  return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

double Sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double InverseSoftplus(double y) {
  if (!(y > 0.0)) throw std::invalid_argument("softplus inverse needs y > 0");
  return y > 30.0 ? y + std::log(-std::expm1(-y)) : std::log(std::expm1(y));
}

StaticProjection ProjectStatic(const StaticRaw& raw, double lane_width) {
  const double half = 0.5 * lane_width;
  const double t = std::tanh(raw(3));
  StaticProjection p;
  p.theta = ThetaVector::D1(Softplus(raw(0)), Softplus(raw(1)),
                            Softplus(raw(2)), half * t);
  p.jacobian << Sigmoid(raw(0)), Sigmoid(raw(1)), Sigmoid(raw(2)),
      half * (1.0 - t * t);
  return p;
}

StaticRaw InitialStaticRaw() {
  const double r = InverseSoftplus(1.0);
  return StaticRaw(r, r, r, 0.0);
}

Mlp::Mlp(std::vector<int> sizes, Activation hidden)
    : sizes_(std::move(sizes)), activation_(hidden) {
  if (sizes_.size() < 2 || sizes_.back() != 1) {
    throw std::invalid_argument("network needs >= 2 layers and one output");
  }
  int count = 0;
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
    count += sizes_[l + 1] * sizes_[l] + sizes_[l + 1];
  }
  params_ = Eigen::VectorXd::Zero(count);
}

void Mlp::InitUniform(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  int offset = 0;
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
    const int in = sizes_[l];
    const int out = sizes_[l + 1];
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (int i = 0; i < out * in + out; ++i) params_(offset + i) = dist(rng);
    offset += out * in + out;
  }
}

double Mlp::Forward(const Eigen::VectorXd& x, Tape* tape) const {
  if (x.size() != sizes_.front()) {
    throw std::invalid_argument("network input has the wrong size");
  }
  if (tape) {
    tape->inputs.clear();
    tape->pre.clear();
  }
  Eigen::VectorXd h = x;
  int offset = 0;
  const int layers = static_cast<int>(sizes_.size()) - 1;
  for (int l = 0; l < layers; ++l) {
    const int in = sizes_[l];
    const int out = sizes_[l + 1];
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                   Eigen::RowMajor>>
        w(params_.data() + offset, out, in);
    Eigen::Map<const Eigen::VectorXd> b(params_.data() + offset + out * in, out);
    offset += out * in + out;
    Eigen::VectorXd z = w * h + b;
    if (tape) {
      tape->inputs.push_back(h);
      tape->pre.push_back(z);
    }
    if (l + 1 < layers) {
      h = activation_ == Activation::kRelu ? Eigen::VectorXd(z.cwiseMax(0.0))
                                           : Eigen::VectorXd(z.array().tanh());
    } else {
      h = z;
    }
  }
  return h(0);
}

Mlp::Gradient Mlp::Backward(const Tape& tape, double out_bar) const {
  const int layers = static_cast<int>(sizes_.size()) - 1;
  if (static_cast<int>(tape.inputs.size()) != layers ||
      static_cast<int>(tape.pre.size()) != layers) {
    throw std::invalid_argument("stale tape: layer count mismatch");
  }
  for (int l = 0; l < layers; ++l) {
    if (tape.inputs[l].size() != sizes_[l] || tape.pre[l].size() != sizes_[l + 1]) {
      throw std::invalid_argument("stale tape: layer shape mismatch");
    }
  }
  Gradient g;
  g.params = Eigen::VectorXd::Zero(params_.size());
  std::vector<int> offsets(layers);
  int offset = 0;
  for (int l = 0; l < layers; ++l) {
    offsets[l] = offset;
    offset += sizes_[l + 1] * sizes_[l] + sizes_[l + 1];
  }
  Eigen::VectorXd z_bar = Eigen::VectorXd::Constant(1, out_bar);
  for (int l = layers - 1; l >= 0; --l) {
    const int in = sizes_[l];
    const int out = sizes_[l + 1];
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                   Eigen::RowMajor>>
        w(params_.data() + offsets[l], out, in);
    Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                             Eigen::RowMajor>>
        gw(g.params.data() + offsets[l], out, in);
    gw = z_bar * tape.inputs[l].transpose();
    g.params.segment(offsets[l] + out * in, out) = z_bar;
    Eigen::VectorXd h_bar = w.transpose() * z_bar;
    if (l > 0) {
      const Eigen::VectorXd& z = tape.pre[l - 1];
      if (activation_ == Activation::kRelu) {
        z_bar = h_bar.cwiseProduct(
            z.unaryExpr([](double v) { return v > 0.0 ? 1.0 : 0.0; }));
      } else {
        z_bar = h_bar.cwiseProduct(
            (1.0 - z.array().tanh().square()).matrix());
      }
    } else {
      g.input = h_bar;
    }
  }
  return g;
}

Mlp MakeDbarNetwork(std::uint64_t seed) {
  Mlp net({kPreviewSize, 50, 50, 1}, Activation::kRelu);
  net.InitUniform(seed);
  return net;
}

Mlp MakeBaselineNetwork(std::uint64_t seed) {
  Mlp net({kNx + kPreviewSize, 32, 32, 1}, Activation::kTanh);
  net.InitUniform(seed);
  return net;
}

const char* PolicyKindName(PolicyKind kind) {
  switch (kind) {
    case PolicyKind::kStaticD1:
      return "static-d1";
    case PolicyKind::kMlpD2:
      return "mlp-d2";
    case PolicyKind::kBaseline:
      return "baseline";
  }
  return "?";
}

Policy Policy::StaticD1(OcpSpec spec, const StaticRaw& raw) {
  spec.variant = CostVariant::kD1Stage;
  spec.Validate();
  Policy p;
  p.kind_ = PolicyKind::kStaticD1;
  p.raw_ = raw;
  p.lane_width_ = spec.lane_width();
  p.track_length_ = spec.track->total_length();
  p.u_max_ = spec.bounds.delta_rate_max;
  p.spec_ = std::move(spec);
  return p;
}

Policy Policy::MlpD2(OcpSpec spec, Mlp net, bool squash_dbar) {
  if (net.input_size() != kPreviewSize) {
    throw InvalidSpecError("indirect controller takes 7 curvature inputs");
  }
  spec.variant = CostVariant::kD2Terminal;
  spec.Validate();
  Policy p;
  p.kind_ = PolicyKind::kMlpD2;
  p.raw_ = net.params();
  p.net_ = std::move(net);
  p.squash_dbar_ = squash_dbar;
  p.lane_width_ = spec.lane_width();
  p.track_length_ = spec.track->total_length();
  p.u_max_ = spec.bounds.delta_rate_max;
  p.spec_ = std::move(spec);
  return p;
}

Policy Policy::Baseline(Mlp net, const TrackSpec& track, double u_max) {
  if (net.input_size() != kNx + kPreviewSize) {
    throw InvalidSpecError("baseline takes 6 state and 7 curvature inputs");
  }
  Policy p;
  p.kind_ = PolicyKind::kBaseline;
  p.raw_ = net.params();
  p.net_ = std::move(net);
  p.lane_width_ = track.lane_width();
  p.track_length_ = track.total_length();
  p.u_max_ = u_max;
  return p;
}

void Policy::set_raw(const Eigen::VectorXd& raw) {
  if (raw.size() != raw_.size()) {
    throw std::invalid_argument("raw parameter size mismatch");
  }
  raw_ = raw;
  if (kind_ != PolicyKind::kStaticD1) net_.params() = raw;
}

double Policy::Dbar(const CurvaturePreview& chi, Eigen::VectorXd* grad) const {
  const double half = 0.5 * lane_width_;
  if (kind_ == PolicyKind::kStaticD1) {
    const double t = std::tanh(raw_(3));
    if (grad) {
      *grad = Eigen::VectorXd::Zero(raw_.size());
      (*grad)(3) = half * (1.0 - t * t);
    }
    return half * t;
  }
  if (kind_ != PolicyKind::kMlpD2) return 0.0;
  Eigen::VectorXd x(kPreviewSize);
  for (int i = 0; i < kPreviewSize; ++i) x(i) = kCurvatureInputScale * chi[i];
  Mlp::Tape tape;
  const double y = net_.Forward(x, grad ? &tape : nullptr);
  double scale = 1.0;
  double out = y;
  if (squash_dbar_) {
    const double t = std::tanh(y);
    out = half * t;
    scale = half * (1.0 - t * t);
  }
  if (grad) *grad = scale * net_.Backward(tape, 1.0).params;
  return out;
}

ThetaVector Policy::Theta(const CurvaturePreview& chi) const {
  switch (kind_) {
    case PolicyKind::kStaticD1:
      return ProjectStatic(raw_, lane_width_).theta;
    case PolicyKind::kMlpD2:
      return ThetaVector::D2(Dbar(chi));
    case PolicyKind::kBaseline:
      break;
  }
  return ThetaVector{};
}

Eigen::VectorXd Policy::BaselineFeatures(const VehicleState& s,
                                         const CurvaturePreview& chi) const {
  Eigen::VectorXd x(kNx + kPreviewSize);
  double sigma = std::fmod(s(kSigma), track_length_);
  if (sigma < 0.0) sigma += track_length_;
  x(kVy) = s(kVy);
  x(kYawRate) = s(kYawRate);
  x(kSigma) = sigma / track_length_;
  x(kD) = s(kD) / (0.5 * lane_width_);
  x(kThetaE) = kThetaScale * s(kThetaE);
  x(kDelta) = kDeltaScale * s(kDelta);
  for (int i = 0; i < kPreviewSize; ++i) {
    x(kNx + i) = kCurvatureInputScale * chi[i];
  }
  return x;
}

PolicyStep Policy::Act(const VehicleState& s, const CurvaturePreview& chi,
                       const PrimalDualSolution* warm, bool record_grads,
                       const SensitivityOptions& sens) const {
  PolicyStep step;
  if (kind_ == PolicyKind::kBaseline) {
    const Eigen::VectorXd x = BaselineFeatures(s, chi);
    Mlp::Tape tape;
    const double y = net_.Forward(x, record_grads ? &tape : nullptr);
    const double t = std::tanh(y);
    step.action = u_max_ * t;
    if (record_grads) {
      const double scale = u_max_ * (1.0 - t * t);
      const Mlp::Gradient g = net_.Backward(tape, scale);
      step.da_draw = g.params;
      step.da_ds << g.input(kVy), g.input(kYawRate),
          g.input(kSigma) / track_length_, g.input(kD) / (0.5 * lane_width_),
          kThetaScale * g.input(kThetaE), kDeltaScale * g.input(kDelta);
    }
    return step;
  }

  Eigen::VectorXd dbar_grad;
  StaticProjection proj;
  if (kind_ == PolicyKind::kStaticD1) {
    proj = ProjectStatic(raw_, lane_width_);
    step.theta = proj.theta;
    step.d_bar = proj.theta.values(3);
  } else {
    step.d_bar = Dbar(chi, record_grads ? &dbar_grad : nullptr);
    step.theta = ThetaVector::D2(step.d_bar);
  }
  MpcOutput out = MpcControl(spec_, s, step.theta, warm);
  step.action = out.action;
  step.converged = out.solution.converged;
  step.relaxed = out.solution.relaxed;
  if (record_grads && step.converged) {
    const PolicyJacobians pj = ComputePolicyJacobians(out.solution, out.nlp, sens);
    step.da_ds = pj.du0_ds;
    if (kind_ == PolicyKind::kStaticD1) {
      step.da_draw = pj.du0_dtheta.cwiseProduct(proj.jacobian);
    } else {
      step.da_draw = pj.du0_dtheta(0) * dbar_grad;
    }
  }
  step.solution = std::move(out.solution);
  step.nlp = std::move(out.nlp);
  return step;
}

void SavePolicyParams(const std::string& path, const Policy& policy) {
  std::ostringstream os;
  os << "mpcil-params 1\n";
  os << "kind " << PolicyKindName(policy.kind()) << "\n";
  if (policy.kind() != PolicyKind::kStaticD1) {
    const auto& sizes = policy.network().sizes();
    os << "sizes " << sizes.size();
    for (int v : sizes) os << ' ' << v;
    os << "\n";
  }
  if (policy.kind() == PolicyKind::kMlpD2) {
    os << "squash 1 " << (policy.squash_dbar() ? 1 : 0) << "\n";
  }
  os << "raw " << policy.raw().size();
  for (int i = 0; i < policy.raw().size(); ++i) {
    os << ' ' << text::FormatDouble(policy.raw()(i));
  }
  os << "\n";
  text::WriteFile(path, os.str());
}

namespace {

struct Checkpoint {
  std::string kind;
  std::map<std::string, std::vector<double>> arrays;
};

Checkpoint ReadCheckpoint(const std::string& path) {
  std::istringstream is(text::ReadFile(path));
  Checkpoint c;
  std::string line;
  int line_no = 0;
  bool header = false;
  while (std::getline(is, line)) {
    ++line_no;
    line = text::Trim(line);
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string name;
    ls >> name;
    if (!header) {
      std::string version;
      ls >> version;
      if (name != "mpcil-params") {
        throw FormatError("not a parameter checkpoint", line_no);
      }
      if (version != "1") {
        throw FormatError("unsupported checkpoint version " + version, line_no);
      }
      header = true;
      continue;
    }
    if (name == "kind") {
      ls >> c.kind;
      continue;
    }
    std::string count_str;
    ls >> count_str;
    const int count = text::ParseInt(count_str, line_no);
    std::vector<double> values;
    values.reserve(count);
    std::string tok;
    while (ls >> tok) values.push_back(text::ParseDouble(tok, line_no));
    if (static_cast<int>(values.size()) != count) {
      throw FormatError("array '" + name + "' has " +
                            std::to_string(values.size()) + " values, expected " +
                            std::to_string(count),
                        line_no);
    }
    c.arrays[name] = std::move(values);
  }
  if (!header) throw FormatError("empty checkpoint", line_no);
  if (c.arrays.count("raw") == 0) throw FormatError("missing 'raw' array", line_no);
  return c;
}

}  // namespace

PolicyKind ReadCheckpointKind(const std::string& path) {
  const Checkpoint c = ReadCheckpoint(path);
  for (PolicyKind k :
       {PolicyKind::kStaticD1, PolicyKind::kMlpD2, PolicyKind::kBaseline}) {
    if (c.kind == PolicyKindName(k)) return k;
  }
  throw FormatError("unknown policy kind '" + c.kind + "'", 0);
}

void LoadPolicyParams(const std::string& path, Policy& policy) {
  const Checkpoint c = ReadCheckpoint(path);
  if (c.kind != PolicyKindName(policy.kind())) {
    throw FormatError("checkpoint holds a '" + c.kind + "' policy", 0);
  }
  if (policy.kind() != PolicyKind::kStaticD1) {
    const auto it = c.arrays.find("sizes");
    std::vector<double> expected(policy.network().sizes().begin(),
                                 policy.network().sizes().end());
    if (it == c.arrays.end() || it->second != expected) {
      throw FormatError("network shape does not match the checkpoint", 0);
    }
  }
  const auto& raw = c.arrays.at("raw");
  if (static_cast<int>(raw.size()) != policy.num_params()) {
    throw FormatError("parameter count does not match the policy", 0);
  }
  policy.set_raw(Eigen::Map<const Eigen::VectorXd>(raw.data(), raw.size()));
  const auto squash = c.arrays.find("squash");
  if (policy.kind() == PolicyKind::kMlpD2 && squash != c.arrays.end() &&
      squash->second.size() == 1) {
    policy.set_squash_dbar(squash->second[0] != 0.0);
  }
}

}  // namespace mpcil
