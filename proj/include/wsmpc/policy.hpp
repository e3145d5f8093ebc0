#ifndef WSMPC_POLICY_HPP_
#define WSMPC_POLICY_HPP_

// Warm-start policy and value networks: path-relative observations, a ReLU
// MLP with hand-written backprop, a diagonal Gaussian head, Adam, and JSON
// checkpoints.

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <istream>
#include <numbers>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "wsmpc/errors.hpp"
#include "wsmpc/trackgeom.hpp"
#include "wsmpc/vehicle.hpp"

namespace wsmpc {

// ---------------------------------------------------------------------------
// Observation

struct ObservationConfig {
  std::size_t lookahead_count = 10;
  // Arc length between consecutive lookahead points. Waypoints are a few
  // millimeters apart, so taking them consecutively would look only
  // centimeters ahead.
  double lookahead_stride = 0.5;

  std::size_t dim() const { return 3 + 2 * lookahead_count; }

  void validate() const {
    if (lookahead_count < 1) throw ValidationError("lookahead_count must be >= 1");
    if (!(lookahead_stride > 0.0)) {
      throw ValidationError("lookahead_stride must be positive");
    }
  }
};

struct Observation {
  double v = 0.0;
  double yaw_error = 0.0;
  double xte = 0.0;
  std::vector<Vec2> lookahead;  // vehicle frame, x forward, y left

  std::vector<double> to_vector() const {
    std::vector<double> out;
    out.reserve(3 + 2 * lookahead.size());
    out.push_back(v);
    out.push_back(yaw_error);
    out.push_back(xte);
    for (const Vec2& p : lookahead) {
      out.push_back(p.x);
      out.push_back(p.y);
    }
    return out;
  }
};

inline Observation observe(const Track& track, const VehicleState& state,
                           const ObservationConfig& config = {}) {
  config.validate();
  const Vec2 pos = state.position();
  const std::size_t i = nearest_waypoint_index(track, pos);
  Observation obs;
  obs.v = state.v;
  obs.xte = std::sqrt(squared_distance(pos, track.point(i)));
  obs.yaw_error = std::abs(wrap_angle(state.yaw - segment_heading(track, i)));
  const double c = std::cos(state.yaw);
  const double s = std::sin(state.yaw);
  const double s0 = track.arc_length(i);
  obs.lookahead.reserve(config.lookahead_count);
  for (std::size_t k = 1; k <= config.lookahead_count; ++k) {
    const Vec2 p = track.point(track.index_at_arc_length(
        s0 + static_cast<double>(k) * config.lookahead_stride));
    const double dx = p.x - pos.x;
    const double dy = p.y - pos.y;
    obs.lookahead.push_back({c * dx + s * dy, -s * dx + c * dy});
  }
  return obs;
}

// ---------------------------------------------------------------------------
// MLP

using RowMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class OutputActivation { kTanh, kLinear };

inline constexpr double kLogStdMin = -5.0;
inline constexpr double kLogStdMax = 2.0;

struct MlpParams {
  std::vector<std::size_t> layer_dims;  // input, hidden..., output
  // Per layer: weights (out x in, row-major) followed by biases (out).
  std::vector<double> data;
  std::vector<double> log_std;  // policy head only; empty for value nets
  OutputActivation output = OutputActivation::kTanh;
  // Fixed input standardization: x' = (x - shift) * scale.
  std::vector<double> input_shift;
  std::vector<double> input_scale;

  std::size_t layer_count() const {
    return layer_dims.empty() ? 0 : layer_dims.size() - 1;
  }
  std::size_t input_dim() const { return layer_dims.front(); }
  std::size_t output_dim() const { return layer_dims.back(); }

  std::size_t weight_offset(std::size_t layer) const {
    std::size_t off = 0;
    for (std::size_t l = 0; l < layer; ++l) {
      off += layer_dims[l + 1] * (layer_dims[l] + 1);
    }
    return off;
  }
  std::size_t bias_offset(std::size_t layer) const {
    return weight_offset(layer) + layer_dims[layer + 1] * layer_dims[layer];
  }
  std::size_t expected_size() const { return weight_offset(layer_count()); }

  void validate() const {
    if (layer_dims.size() < 2) throw StructuralError("an MLP needs at least two layer dims");
    for (std::size_t d : layer_dims) {
      if (d == 0) throw StructuralError("layer dims must be positive");
    }
    if (data.size() != expected_size()) {
      throw StructuralError("parameter array has " + std::to_string(data.size()) +
                            " values, layer dims imply " +
                            std::to_string(expected_size()));
    }
    if (!log_std.empty() && log_std.size() != output_dim()) {
      throw StructuralError("log_std length must match the output dim");
    }
    if (input_shift.size() != input_dim() || input_scale.size() != input_dim()) {
      throw StructuralError("input standardization must match the input dim");
    }
    for (double v : data) {
      if (!std::isfinite(v)) throw NumericalError("non-finite network parameter");
    }
    for (double v : log_std) {
      if (!(v >= kLogStdMin && v <= kLogStdMax)) {
        throw ValidationError("log_std outside [-5, 2]");
      }
    }
    for (std::size_t i = 0; i < input_dim(); ++i) {
      if (!std::isfinite(input_shift[i]) || !std::isfinite(input_scale[i])) {
        throw NumericalError("non-finite input standardization");
      }
    }
  }

  Eigen::Map<const RowMatrix> weights(std::size_t l) const {
    return {data.data() + weight_offset(l), static_cast<Eigen::Index>(layer_dims[l + 1]),
            static_cast<Eigen::Index>(layer_dims[l])};
  }
  Eigen::Map<RowMatrix> weights(std::size_t l) {
    return {data.data() + weight_offset(l), static_cast<Eigen::Index>(layer_dims[l + 1]),
            static_cast<Eigen::Index>(layer_dims[l])};
  }
  Eigen::Map<const Eigen::RowVectorXd> biases(std::size_t l) const {
    return {data.data() + bias_offset(l), static_cast<Eigen::Index>(layer_dims[l + 1])};
  }
};

// He-normal weights, zero biases, identity standardization.
inline MlpParams make_mlp(std::vector<std::size_t> dims, OutputActivation output,
                          std::uint64_t seed, bool with_log_std = false,
                          double log_std_init = -1.0) {
  MlpParams p;
  p.layer_dims = std::move(dims);
  p.output = output;
  if (p.layer_dims.size() < 2) throw StructuralError("an MLP needs at least two layer dims");
  p.data.assign(p.expected_size(), 0.0);
  std::mt19937_64 rng(seed);
  for (std::size_t l = 0; l < p.layer_count(); ++l) {
    const bool last = l + 1 == p.layer_count();
    // The output layer starts small so initial guesses sit near zero.
    const double gain = last ? 0.1 : 1.0;
    std::normal_distribution<double> normal(
        0.0, gain * std::sqrt(2.0 / static_cast<double>(p.layer_dims[l])));
    auto w = p.weights(l);
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = normal(rng);
    }
  }
  if (with_log_std) p.log_std.assign(p.output_dim(), log_std_init);
  p.input_shift.assign(p.input_dim(), 0.0);
  p.input_scale.assign(p.input_dim(), 1.0);
  p.validate();
  return p;
}

inline MlpParams make_policy_network(std::size_t obs_dim, std::size_t action_dim,
                                     std::uint64_t seed, std::size_t hidden = 64,
                                     double log_std_init = -1.0) {
  return make_mlp({obs_dim, hidden, hidden, action_dim}, OutputActivation::kTanh,
                  seed, true, log_std_init);
}

inline MlpParams make_value_network(std::size_t obs_dim, std::uint64_t seed,
                                    std::size_t hidden = 64) {
  return make_mlp({obs_dim, hidden, hidden, 1}, OutputActivation::kLinear, seed);
}

// Activations kept for the backward pass. pre[l] is the affine output of
// layer l, post[l] its activation; post[-1] is the standardized input.
struct ForwardCache {
  RowMatrix input;
  std::vector<RowMatrix> pre;
  std::vector<RowMatrix> post;
};

inline RowMatrix standardize(const MlpParams& p, const RowMatrix& x) {
  if (static_cast<std::size_t>(x.cols()) != p.input_dim()) {
    throw ValidationError("input has dimension " + std::to_string(x.cols()) +
                          ", network expects " + std::to_string(p.input_dim()));
  }
  RowMatrix out = x;
  for (Eigen::Index c = 0; c < out.cols(); ++c) {
    out.col(c) = ((out.col(c).array() - p.input_shift[c]) * p.input_scale[c]).matrix();
  }
  return out;
}

// Rows of `x` are samples.
inline RowMatrix forward_batch(const MlpParams& p, const RowMatrix& x,
                               ForwardCache* cache = nullptr) {
  RowMatrix a = standardize(p, x);
  if (cache != nullptr) {
    cache->input = a;
    cache->pre.clear();
    cache->post.clear();
  }
  for (std::size_t l = 0; l < p.layer_count(); ++l) {
    RowMatrix z = a * p.weights(l).transpose();
    z.rowwise() += p.biases(l);
    const bool last = l + 1 == p.layer_count();
    if (!last) {
      a = z.cwiseMax(0.0);
    } else if (p.output == OutputActivation::kTanh) {
      a = z.array().tanh().matrix();
    } else {
      a = z;
    }
    if (cache != nullptr) {
      cache->pre.push_back(std::move(z));
      cache->post.push_back(a);
    }
  }
  return a;
}

inline std::vector<double> forward(const MlpParams& p, std::span<const double> input) {
  if (input.size() != p.input_dim()) {
    throw ValidationError("input has dimension " + std::to_string(input.size()) +
                          ", network expects " + std::to_string(p.input_dim()));
  }
  RowMatrix x(1, static_cast<Eigen::Index>(input.size()));
  for (std::size_t i = 0; i < input.size(); ++i) x(0, static_cast<Eigen::Index>(i)) = input[i];
  const RowMatrix y = forward_batch(p, x);
  return {y.data(), y.data() + y.size()};
}

inline std::vector<double> forward(const MlpParams& p, const Observation& obs) {
  return forward(p, obs.to_vector());
}

struct MlpGradients {
  std::vector<double> data;
  std::vector<double> log_std;

  static MlpGradients zeros_like(const MlpParams& p) {
    return {std::vector<double>(p.data.size(), 0.0),
            std::vector<double>(p.log_std.size(), 0.0)};
  }

  MlpGradients& operator+=(const MlpGradients& o) {
    for (std::size_t i = 0; i < data.size(); ++i) data[i] += o.data[i];
    for (std::size_t i = 0; i < log_std.size(); ++i) log_std[i] += o.log_std[i];
    return *this;
  }
  MlpGradients& operator*=(double s) {
    for (double& v : data) v *= s;
    for (double& v : log_std) v *= s;
    return *this;
  }
};

// Accumulates dL/dparams into grad.data given dL/d(output) for each row.
inline void backward(const MlpParams& p, const ForwardCache& cache,
                     const RowMatrix& d_output, MlpGradients& grad) {
  RowMatrix da = d_output;
  for (std::size_t l = p.layer_count(); l-- > 0;) {
    const bool last = l + 1 == p.layer_count();
    RowMatrix dz;
    if (!last) {
      dz = da.cwiseProduct(
          (cache.pre[l].array() > 0.0).cast<double>().matrix());
    } else if (p.output == OutputActivation::kTanh) {
      dz = da.cwiseProduct(
          (1.0 - cache.post[l].array().square()).matrix());
    } else {
      dz = da;
    }
    const RowMatrix& a_prev = l == 0 ? cache.input : cache.post[l - 1];
    Eigen::Map<RowMatrix> gw(grad.data.data() + p.weight_offset(l),
                             static_cast<Eigen::Index>(p.layer_dims[l + 1]),
                             static_cast<Eigen::Index>(p.layer_dims[l]));
    gw.noalias() += dz.transpose() * a_prev;
    Eigen::Map<Eigen::RowVectorXd> gb(grad.data.data() + p.bias_offset(l),
                                      static_cast<Eigen::Index>(p.layer_dims[l + 1]));
    gb += dz.colwise().sum();
    if (l > 0) da = dz * p.weights(l);
  }
}

inline RowMatrix to_matrix(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) throw ValidationError("empty batch");
  RowMatrix m(static_cast<Eigen::Index>(rows.size()),
              static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != rows.front().size()) {
      throw ValidationError("ragged batch");
    }
    for (std::size_t c = 0; c < rows[r].size(); ++c) {
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
    }
  }
  return m;
}

// Mean over samples and components of (forward(x) - target)^2.
inline double mse_loss(const MlpParams& p, const RowMatrix& x, const RowMatrix& target,
                       MlpGradients* grad = nullptr) {
  if (x.rows() == 0) throw ValidationError("empty batch");
  ForwardCache cache;
  const RowMatrix y = forward_batch(p, x, grad != nullptr ? &cache : nullptr);
  if (y.rows() != target.rows() || y.cols() != target.cols()) {
    throw ValidationError("target shape does not match the network output");
  }
  const RowMatrix diff = y - target;
  const double n = static_cast<double>(diff.size());
  if (grad != nullptr) backward(p, cache, diff * (2.0 / n), *grad);
  return diff.squaredNorm() / n;
}

// ---------------------------------------------------------------------------
// Diagonal Gaussian head

inline constexpr double kHalfLog2Pi = 0.91893853320467274178;  // log(2 pi) / 2

inline double gaussian_log_prob(std::span<const double> action,
                                std::span<const double> mean,
                                std::span<const double> log_std) {
  double lp = 0.0;
  for (std::size_t i = 0; i < action.size(); ++i) {
    const double z = (action[i] - mean[i]) * std::exp(-log_std[i]);
    lp += -0.5 * z * z - log_std[i] - kHalfLog2Pi;
  }
  return lp;
}

inline double gaussian_entropy(std::span<const double> log_std) {
  double h = 0.0;
  for (double ls : log_std) h += ls + kHalfLog2Pi + 0.5;
  return h;
}

struct PolicyOutput {
  std::vector<double> mean;    // in (-1, 1)
  std::vector<double> action;  // mean + noise; unclamped
  double log_prob = 0.0;
};

template <class Rng>
PolicyOutput sample_action(const MlpParams& p, std::span<const double> input, Rng& rng) {
  if (p.log_std.empty()) throw StructuralError("network has no Gaussian head");
  PolicyOutput out;
  out.mean = forward(p, input);
  out.action.resize(out.mean.size());
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t i = 0; i < out.mean.size(); ++i) {
    out.action[i] = out.mean[i] + std::exp(p.log_std[i]) * normal(rng);
  }
  out.log_prob = gaussian_log_prob(out.action, out.mean, p.log_std);
  return out;
}

// ---------------------------------------------------------------------------
// Adam

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  long step = 0;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

inline void adam_update(std::span<double> params, std::span<const double> grad,
                        std::span<double> m, std::span<double> v, long step,
                        double lr, const AdamConfig& cfg = {}) {
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
    params[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.epsilon);
  }
}

// Updates data then log_std (clamped to its range) from one shared state.
inline void adam_update(MlpParams& p, const MlpGradients& g, AdamState& state,
                        double lr, const AdamConfig& cfg = {}) {
  const std::size_t n = p.data.size() + p.log_std.size();
  if (g.data.size() != p.data.size() || g.log_std.size() != p.log_std.size()) {
    throw ValidationError("gradient shape does not match parameters");
  }
  if (state.m.empty()) {
    state.m.assign(n, 0.0);
    state.v.assign(n, 0.0);
  }
  if (state.m.size() != n || state.v.size() != n) {
    throw ValidationError("optimizer state does not match parameters");
  }
  ++state.step;
  std::span<double> m(state.m), v(state.v);
  adam_update(p.data, g.data, m.first(p.data.size()), v.first(p.data.size()),
              state.step, lr, cfg);
  adam_update(p.log_std, g.log_std, m.subspan(p.data.size()),
              v.subspan(p.data.size()), state.step, lr, cfg);
  for (double& ls : p.log_std) ls = std::fmin(std::fmax(ls, kLogStdMin), kLogStdMax);
}

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr const char* kMlpFormat = "wsmpc-mlp";
inline constexpr int kMlpFormatVersion = 1;

inline nlohmann::json to_json(const MlpParams& p) {
  nlohmann::json layers = nlohmann::json::array();
  for (std::size_t l = 0; l < p.layer_count(); ++l) {
    const std::size_t w0 = p.weight_offset(l), b0 = p.bias_offset(l);
    const std::size_t b1 = b0 + p.layer_dims[l + 1];
    layers.push_back({
        {"weights", std::vector<double>(p.data.begin() + w0, p.data.begin() + b0)},
        {"biases", std::vector<double>(p.data.begin() + b0, p.data.begin() + b1)},
    });
  }
  return {
      {"format", kMlpFormat},
      {"version", kMlpFormatVersion},
      {"layer_dims", p.layer_dims},
      {"output_activation", p.output == OutputActivation::kTanh ? "tanh" : "linear"},
      {"input_shift", p.input_shift},
      {"input_scale", p.input_scale},
      {"layers", layers},
      {"log_std", p.log_std},
  };
}

inline MlpParams mlp_from_json(const nlohmann::json& j) {
  try {
    if (!j.is_object()) throw StructuralError("checkpoint is not an object");
    if (j.at("format").get<std::string>() != kMlpFormat) {
      throw StructuralError("not a network checkpoint");
    }
    const int version = j.at("version").get<int>();
    if (version != kMlpFormatVersion) {
      throw ValidationError("unsupported checkpoint version " + std::to_string(version) +
                            " (expected " + std::to_string(kMlpFormatVersion) + ")");
    }
    MlpParams p;
    p.layer_dims = j.at("layer_dims").get<std::vector<std::size_t>>();
    const std::string act = j.at("output_activation").get<std::string>();
    if (act == "tanh") {
      p.output = OutputActivation::kTanh;
    } else if (act == "linear") {
      p.output = OutputActivation::kLinear;
    } else {
      throw ValidationError("unknown output activation '" + act + "'");
    }
    p.input_shift = j.at("input_shift").get<std::vector<double>>();
    p.input_scale = j.at("input_scale").get<std::vector<double>>();
    p.log_std = j.at("log_std").get<std::vector<double>>();
    const auto& layers = j.at("layers");
    if (p.layer_dims.size() < 2 || layers.size() != p.layer_dims.size() - 1) {
      throw StructuralError("layer count does not match layer_dims");
    }
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const auto w = layers[l].at("weights").get<std::vector<double>>();
      const auto b = layers[l].at("biases").get<std::vector<double>>();
      if (w.size() != p.layer_dims[l] * p.layer_dims[l + 1] ||
          b.size() != p.layer_dims[l + 1]) {
        throw StructuralError("layer " + std::to_string(l) +
                              " does not match layer_dims");
      }
      p.data.insert(p.data.end(), w.begin(), w.end());
      p.data.insert(p.data.end(), b.begin(), b.end());
    }
    p.validate();
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw StructuralError(std::string("malformed checkpoint: ") + e.what());
  }
}

inline void save_mlp(std::ostream& out, const MlpParams& p) {
  p.validate();
  out << to_json(p).dump(1) << '\n';
}

inline MlpParams load_mlp(std::istream& in) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("checkpoint: ") + e.what());
  }
  return mlp_from_json(j);
}

}  // namespace wsmpc

#endif  // WSMPC_POLICY_HPP_
