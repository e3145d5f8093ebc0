#ifndef WSMPC_LEARN_HPP_
#define WSMPC_LEARN_HPP_

// Phase 1: expert demonstrations and behavior cloning. Phase 2: on-policy
// fine-tuning that mixes a clipped PPO objective with imitation of the
// real-time MPC's own solutions.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <istream>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "wsmpc/action_codec.hpp"
#include "wsmpc/episode.hpp"
#include "wsmpc/errors.hpp"
#include "wsmpc/mpc.hpp"
#include "wsmpc/policy.hpp"
#include "wsmpc/trackgeom.hpp"
#include "wsmpc/vehicle.hpp"

namespace wsmpc {

// ---------------------------------------------------------------------------
// Demonstrations

struct Demonstration {
  Observation obs;
  std::vector<double> target;  // normalized 2H expert solution
};

struct DemoConfig {
  std::size_t count = 3000;
  // expert_config(), spelled out: calling it here crashes GCC 11 once a
  // DemoConfig is nested in another aggregate.
  MpcConfig expert{.max_iterations = 300, .early_stop_threshold = std::nullopt};
  ObservationConfig observation;
  // Zero guess on the first step of every episode; afterwards the shifted
  // previous expert solution (zeros if kZeros is chosen here).
  WarmStartSource warm_start = WarmStartSource::kPreviousShifted;
  std::size_t max_episode_steps = 5000;
  // Gaussian noise on the input actually applied (the stored target stays
  // the expert's solution), so the data covers recovery from small errors.
  double accel_noise = 0.0;  // m/s^2
  double steer_noise = 0.0;  // rad
  StartPerturbation start_perturbation;
  std::uint64_t seed = 0;
};

struct DemoStats {
  std::size_t attempted_steps = 0;
  std::size_t off_track_steps = 0;
  std::size_t episodes = 0;
  std::size_t laps_completed = 0;
  std::size_t below_early_stop = 0;  // planned xte sum under 0.1 m
};

inline std::vector<Demonstration> collect_demos(std::span<const Track> tracks,
                                                const DemoConfig& config,
                                                DemoStats* stats = nullptr) {
  if (config.count < 1) throw ValidationError("demonstration count must be >= 1");
  if (tracks.empty()) throw ValidationError("no tracks to collect on");
  config.expert.validate();
  config.observation.validate();

  std::vector<Demonstration> demos;
  demos.reserve(config.count);
  DemoStats st;
  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::size_t track_id = 0;
  while (demos.size() < config.count) {
    const Track& track = tracks[track_id % tracks.size()];
    ++track_id;
    ++st.episodes;
    VehicleState s = start_state(track, config.expert.v_ref, config.start_perturbation,
                                 rng());
    EpisodeTracker tracker(track, s, config.max_episode_steps);
    std::optional<MpcSolution> previous;
    ControlInput applied{};
    while (demos.size() < config.count) {
      WarmStartSource ws = config.warm_start;
      if (ws == WarmStartSource::kPolicy) {
        throw ValidationError("the expert cannot be warm-started from a policy");
      }
      if (!previous) ws = WarmStartSource::kZeros;
      MpcSolution sol = solve(track, s, config.expert, ws, nullptr,
                              previous ? &*previous : nullptr, applied);
      demos.push_back({observe(track, s, config.observation),
                       normalize_sequence(sol.sequence, config.expert.vehicle)});
      ++st.attempted_steps;
      if (sol.planned_xte_sum < 0.1) ++st.below_early_stop;
      applied = sol.sequence.front();
      if (config.accel_noise > 0.0 || config.steer_noise > 0.0) {
        applied.accel += config.accel_noise * normal(rng);
        applied.steer += config.steer_noise * normal(rng);
        applied = config.expert.vehicle.clamp(applied);
      }
      s = step(s, applied, config.expert.vehicle);
      previous = std::move(sol);
      const auto status = tracker.advance(s);
      if (status.end == EpisodeEnd::kOffTrack) ++st.off_track_steps;
      if (status.end == EpisodeEnd::kLapCompleted) ++st.laps_completed;
      if (status.end != EpisodeEnd::kRunning) break;
    }
  }
  if (stats != nullptr) *stats = st;
  if (2 * st.off_track_steps > st.attempted_steps) {
    throw NumericalError("expert left the track on " + std::to_string(st.off_track_steps) +
                         " of " + std::to_string(st.attempted_steps) +
                         " steps; it must be competent before cloning");
  }
  return demos;
}

inline constexpr const char* kDemoFormat = "wsmpc-demos";
inline constexpr int kDemoFormatVersion = 1;

inline void save_demos(std::ostream& out, const std::vector<Demonstration>& demos) {
  nlohmann::json records = nlohmann::json::array();
  for (const Demonstration& d : demos) {
    records.push_back({{"obs", d.obs.to_vector()}, {"target", d.target}});
  }
  const std::size_t obs_dim = demos.empty() ? 0 : demos.front().obs.to_vector().size();
  const std::size_t act_dim = demos.empty() ? 0 : demos.front().target.size();
  const nlohmann::json doc = {{"format", kDemoFormat},
                              {"version", kDemoFormatVersion},
                              {"obs_dim", obs_dim},
                              {"action_dim", act_dim},
                              {"records", records}};
  out << doc.dump() << '\n';
}

inline Observation observation_from_vector(std::span<const double> v) {
  if (v.size() < 5 || (v.size() - 3) % 2 != 0) {
    throw StructuralError("observation vector has invalid length " +
                          std::to_string(v.size()));
  }
  Observation o;
  o.v = v[0];
  o.yaw_error = v[1];
  o.xte = v[2];
  for (std::size_t i = 3; i < v.size(); i += 2) o.lookahead.push_back({v[i], v[i + 1]});
  return o;
}

inline std::vector<Demonstration> load_demos(std::istream& in) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("demonstrations: ") + e.what());
  }
  try {
    if (doc.at("format").get<std::string>() != kDemoFormat) {
      throw StructuralError("not a demonstration file");
    }
    const int version = doc.at("version").get<int>();
    if (version != kDemoFormatVersion) {
      throw ValidationError("unsupported demonstration file version " +
                            std::to_string(version));
    }
    const auto obs_dim = doc.at("obs_dim").get<std::size_t>();
    const auto act_dim = doc.at("action_dim").get<std::size_t>();
    std::vector<Demonstration> demos;
    for (const auto& r : doc.at("records")) {
      const auto obs = r.at("obs").get<std::vector<double>>();
      auto target = r.at("target").get<std::vector<double>>();
      if (obs.size() != obs_dim || target.size() != act_dim) {
        throw StructuralError("record " + std::to_string(demos.size()) +
                              " does not match the declared dimensions");
      }
      for (double t : target) {
        if (!(t >= -1.0 && t <= 1.0)) {
          throw ValidationError("demonstration target outside [-1, 1]");
        }
      }
      demos.push_back({observation_from_vector(obs), std::move(target)});
    }
    return demos;
  } catch (const nlohmann::json::exception& e) {
    throw StructuralError(std::string("malformed demonstration file: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Behavior cloning

struct BcConfig {
  std::size_t epochs = 200;
  std::size_t batch_size = 64;
  double learning_rate = 1e-3;
  double validation_fraction = 0.1;
  std::uint64_t seed = 0;
  // Fit input standardization to the training split before the first epoch.
  bool fit_input_standardization = true;
};

struct BcEpoch {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double validation_loss = 0.0;  // NaN when there is no validation split
};

struct BcResult {
  MlpParams params;
  std::vector<BcEpoch> history;
};

// Per-feature mean and inverse standard deviation; near-constant features
// keep unit scale.
inline void fit_standardization(MlpParams& p, const RowMatrix& x) {
  const Eigen::Index n = x.rows();
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    const double mean = x.col(c).mean();
    const double var = (x.col(c).array() - mean).square().sum() / static_cast<double>(n);
    p.input_shift[static_cast<std::size_t>(c)] = mean;
    p.input_scale[static_cast<std::size_t>(c)] = var > 1e-12 ? 1.0 / std::sqrt(var) : 1.0;
  }
}

inline RowMatrix gather_rows(const RowMatrix& m, std::span<const std::size_t> rows) {
  RowMatrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(rows[i]));
  }
  return out;
}

inline BcResult train_bc(MlpParams policy, const std::vector<Demonstration>& demos,
                         const BcConfig& config,
                         const std::function<void(const BcEpoch&)>& on_epoch = {}) {
  if (demos.empty()) throw ValidationError("no demonstrations to train on");
  if (config.batch_size < 1) throw ValidationError("batch size must be >= 1");
  if (!(config.validation_fraction >= 0.0 && config.validation_fraction < 1.0)) {
    throw ValidationError("validation fraction must lie in [0, 1)");
  }
  std::vector<std::vector<double>> xs, ys;
  for (const Demonstration& d : demos) {
    xs.push_back(d.obs.to_vector());
    ys.push_back(d.target);
  }
  const RowMatrix x = to_matrix(xs);
  const RowMatrix y = to_matrix(ys);

  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(demos.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_val = static_cast<std::size_t>(
      std::floor(config.validation_fraction * static_cast<double>(demos.size())));
  if (n_val == demos.size()) throw ValidationError("validation split leaves no training data");
  std::vector<std::size_t> train(order.begin(), order.end() - static_cast<long>(n_val));
  const std::vector<std::size_t> val(order.end() - static_cast<long>(n_val), order.end());
  const RowMatrix x_train = gather_rows(x, train);
  const RowMatrix y_train = gather_rows(y, train);
  const RowMatrix x_val = n_val > 0 ? gather_rows(x, val) : RowMatrix();
  const RowMatrix y_val = n_val > 0 ? gather_rows(y, val) : RowMatrix();

  if (config.fit_input_standardization) fit_standardization(policy, x_train);

  BcResult result;
  AdamState adam;
  std::vector<std::size_t> idx(train.size());
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    double sum = 0.0;
    for (std::size_t start = 0; start < idx.size(); start += config.batch_size) {
      const std::size_t end = std::min(idx.size(), start + config.batch_size);
      const std::span<const std::size_t> rows(idx.data() + start, end - start);
      MlpGradients g = MlpGradients::zeros_like(policy);
      // log_std is untouched by cloning.
      const double loss =
          mse_loss(policy, gather_rows(x_train, rows), gather_rows(y_train, rows), &g);
      if (!std::isfinite(loss)) {
        throw NumericalError("behavior cloning loss became non-finite in epoch " +
                             std::to_string(epoch));
      }
      adam_update(policy, g, adam, config.learning_rate);
      sum += loss * static_cast<double>(rows.size());
    }
    BcEpoch e;
    e.epoch = epoch;
    e.train_loss = sum / static_cast<double>(idx.size());
    e.validation_loss = n_val > 0 ? mse_loss(policy, x_val, y_val)
                                  : std::numeric_limits<double>::quiet_NaN();
    if (!std::isfinite(e.train_loss) || (n_val > 0 && !std::isfinite(e.validation_loss))) {
      throw NumericalError("behavior cloning loss became non-finite in epoch " +
                           std::to_string(epoch));
    }
    result.history.push_back(e);
    if (on_epoch) on_epoch(e);
  }
  result.params = std::move(policy);
  return result;
}

// ---------------------------------------------------------------------------
// Reward

enum class TimeMode { kIterationsProxy, kWallClock };

inline const char* to_string(TimeMode m) {
  return m == TimeMode::kIterationsProxy ? "iterations_proxy" : "wall_clock";
}

inline TimeMode time_mode_from_string(const std::string& s) {
  if (s == "iterations_proxy") return TimeMode::kIterationsProxy;
  if (s == "wall_clock") return TimeMode::kWallClock;
  throw ValidationError("unknown time mode '" + s + "'");
}

// Nominal seconds per solver iteration: 0.08 s worst case over 50 iterations.
inline constexpr double kNominalIterationTime = 0.0016;

inline double compute_reward(const MpcSolution& solution,
                             TimeMode mode = TimeMode::kIterationsProxy,
                             double t_iter_nominal = kNominalIterationTime) {
  const double time = mode == TimeMode::kIterationsProxy
                          ? static_cast<double>(solution.iterations_used) * t_iter_nominal
                          : solution.solve_time;
  return -time - solution.planned_xte_sum;
}

// ---------------------------------------------------------------------------
// Rollouts, advantages, PPO

struct RolloutBuffer {
  std::vector<std::vector<double>> obs;
  std::vector<std::vector<double>> actions;  // sampled, unclamped
  std::vector<double> log_probs;
  std::vector<double> rewards;
  std::vector<double> values;
  std::vector<std::vector<double>> targets;  // normalized fast-MPC solutions
  std::vector<bool> dones;                   // episode ended after this step
  // Value of the state following the last step, for bootstrapping when the
  // buffer ends mid-episode.
  double last_value = 0.0;

  std::size_t size() const { return rewards.size(); }

  void clear() { *this = RolloutBuffer{}; }

  void validate() const {
    const std::size_t n = size();
    if (obs.size() != n || actions.size() != n || log_probs.size() != n ||
        values.size() != n || targets.size() != n || dones.size() != n) {
      throw StructuralError("rollout buffer arrays differ in length");
    }
  }
};

struct Advantages {
  std::vector<double> raw;
  std::vector<double> normalized;
  std::vector<double> returns;  // raw + values
};

inline Advantages gae_advantages(const RolloutBuffer& buf, double gamma, double gae_lambda) {
  buf.validate();
  const std::size_t n = buf.size();
  Advantages out;
  out.raw.assign(n, 0.0);
  double running = 0.0;
  for (std::size_t t = n; t-- > 0;) {
    const bool last = t + 1 == n;
    const double next_value =
        buf.dones[t] ? 0.0 : (last ? buf.last_value : buf.values[t + 1]);
    const double delta = buf.rewards[t] + gamma * next_value - buf.values[t];
    const double carry = buf.dones[t] ? 0.0 : running;
    running = delta + gamma * gae_lambda * carry;
    out.raw[t] = running;
  }
  out.returns.resize(n);
  for (std::size_t t = 0; t < n; ++t) out.returns[t] = out.raw[t] + buf.values[t];
  out.normalized = out.raw;
  if (n > 1) {
    const double mean = std::accumulate(out.raw.begin(), out.raw.end(), 0.0) /
                        static_cast<double>(n);
    double var = 0.0;
    for (double a : out.raw) var += (a - mean) * (a - mean);
    const double sd = std::sqrt(var / static_cast<double>(n));
    for (double& a : out.normalized) a = (a - mean) / (sd + 1e-8);
  }
  return out;
}

struct PpoBatch {
  RowMatrix obs;
  RowMatrix actions;
  RowMatrix targets;
  std::vector<double> old_log_probs;
  std::vector<double> advantages;
  std::vector<double> returns;
};

struct PpoLosses {
  double policy = 0.0;
  double entropy = 0.0;  // negated mean entropy
  double value = 0.0;
  double imitation = 0.0;
};

struct LossWeights {
  double lambda = 0.9;   // RL share of the combined loss
  double policy = 0.5;   // lambda1
  double entropy = 0.0;  // lambda2
  double value = 0.5;    // lambda3
};

inline double combined_loss(double l_rl, double l_imitation, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ValidationError("lambda must lie in [0, 1]");
  return lambda * l_rl + (1.0 - lambda) * l_imitation;
}

inline double rl_loss(const PpoLosses& l, const LossWeights& w) {
  return w.policy * l.policy + w.entropy * l.entropy + w.value * l.value;
}

// Losses on one minibatch. When gradients are requested they are those of
// combined_loss(rl_loss(...), imitation, lambda): policy_grad covers the
// policy surrogate, entropy and imitation terms; value_grad the value term.
inline PpoLosses ppo_losses(const MlpParams& policy, const MlpParams& value_net,
                            const PpoBatch& b, double clip, const LossWeights& w,
                            MlpGradients* policy_grad = nullptr,
                            MlpGradients* value_grad = nullptr) {
  const Eigen::Index n = b.obs.rows();
  if (n == 0) throw ValidationError("empty minibatch");
  if (policy.log_std.empty()) throw StructuralError("policy has no Gaussian head");
  const Eigen::Index d = static_cast<Eigen::Index>(policy.output_dim());
  const double inv_n = 1.0 / static_cast<double>(n);

  ForwardCache pcache;
  const RowMatrix mean = forward_batch(policy, b.obs, &pcache);
  PpoLosses out;
  RowMatrix d_mean = RowMatrix::Zero(n, d);
  std::vector<double> d_log_std(static_cast<std::size_t>(d), 0.0);

  for (Eigen::Index i = 0; i < n; ++i) {
    double lp = 0.0;
    for (Eigen::Index k = 0; k < d; ++k) {
      const double ls = policy.log_std[static_cast<std::size_t>(k)];
      const double z = (b.actions(i, k) - mean(i, k)) * std::exp(-ls);
      lp += -0.5 * z * z - ls - kHalfLog2Pi;
    }
    const double adv = b.advantages[static_cast<std::size_t>(i)];
    const double ratio = std::exp(lp - b.old_log_probs[static_cast<std::size_t>(i)]);
    const double clipped = std::clamp(ratio, 1.0 - clip, 1.0 + clip);
    const double unclipped_term = ratio * adv;
    const double clipped_term = clipped * adv;
    out.policy -= std::min(unclipped_term, clipped_term) * inv_n;
    // The gradient flows through the unclipped branch whenever it is the min.
    if (unclipped_term <= clipped_term) {
      const double g = -w.lambda * w.policy * adv * ratio * inv_n;  // d/d logp
      for (Eigen::Index k = 0; k < d; ++k) {
        const double ls = policy.log_std[static_cast<std::size_t>(k)];
        const double inv_var = std::exp(-2.0 * ls);
        const double diff = b.actions(i, k) - mean(i, k);
        d_mean(i, k) += g * diff * inv_var;
        d_log_std[static_cast<std::size_t>(k)] += g * (diff * diff * inv_var - 1.0);
      }
    }
  }
  out.entropy = -gaussian_entropy(policy.log_std);
  for (auto& g : d_log_std) g += -w.lambda * w.entropy;

  const RowMatrix diff = mean - b.targets;
  out.imitation = diff.squaredNorm() / static_cast<double>(diff.size());
  d_mean += diff * ((1.0 - w.lambda) * 2.0 / static_cast<double>(diff.size()));

  ForwardCache vcache;
  const RowMatrix v = forward_batch(value_net, b.obs, &vcache);
  RowMatrix dv(n, 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double e = v(i, 0) - b.returns[static_cast<std::size_t>(i)];
    out.value += e * e * inv_n;
    dv(i, 0) = w.lambda * w.value * 2.0 * e * inv_n;
  }

  if (policy_grad != nullptr) {
    backward(policy, pcache, d_mean, *policy_grad);
    for (std::size_t k = 0; k < d_log_std.size(); ++k) {
      policy_grad->log_std[k] += d_log_std[k];
    }
  }
  if (value_grad != nullptr) backward(value_net, vcache, dv, *value_grad);
  return out;
}

// ---------------------------------------------------------------------------
// Fine-tuning

struct FinetuneConfig {
  LossWeights weights;
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double clip = 0.2;
  std::size_t epochs = 10;
  std::size_t minibatch_size = 64;
  std::size_t steps_per_batch = 2048;
  double learning_rate = 3e-4;
  double value_learning_rate = 1e-3;
  TimeMode time_mode = TimeMode::kIterationsProxy;
  double t_iter_nominal = kNominalIterationTime;
  std::size_t max_episode_steps = 5000;
  // Divergence guard: batch mean planned xte above factor x the first
  // batch's level halves the learning rate; this many in a row aborts.
  double divergence_factor = 5.0;
  int divergence_patience = 3;
  ObservationConfig observation;

  void validate() const {
    if (!(weights.lambda >= 0.0 && weights.lambda <= 1.0)) {
      throw ValidationError("lambda must lie in [0, 1]");
    }
    if (!(gamma > 0.0 && gamma < 1.0)) throw ValidationError("gamma must lie in (0, 1)");
    if (!(gae_lambda >= 0.0 && gae_lambda <= 1.0)) {
      throw ValidationError("gae_lambda must lie in [0, 1]");
    }
    if (!(clip > 0.0)) throw ValidationError("clip must be positive");
    if (epochs < 1 || minibatch_size < 1 || steps_per_batch < 1) {
      throw ValidationError("epochs, minibatch size and steps per batch must be >= 1");
    }
    if (!(learning_rate >= 0.0) || !(value_learning_rate >= 0.0)) {
      throw ValidationError("learning rates must be non-negative");
    }
    observation.validate();
  }
};

struct FinetuneLogRow {
  std::size_t batch = 0;
  double mean_reward = 0.0;
  double mean_iterations = 0.0;
  double mean_xte = 0.0;
  double l_policy = 0.0;
  double l_value = 0.0;
  double l_imitation = 0.0;
  double mean_planned_xte = 0.0;
  double learning_rate = 0.0;
};

struct FinetuneResult {
  MlpParams policy;
  MlpParams value_net;
  std::vector<FinetuneLogRow> log;
  std::size_t episodes = 0;
  std::size_t off_track_episodes = 0;
};

inline void write_finetune_log(std::ostream& out, const std::vector<FinetuneLogRow>& rows) {
  out << "batch,mean_reward,mean_iterations,mean_xte,L_policy,L_value,L_imitation,"
         "mean_planned_xte,learning_rate\n";
  out.precision(17);
  for (const FinetuneLogRow& r : rows) {
    out << r.batch << ',' << r.mean_reward << ',' << r.mean_iterations << ','
        << r.mean_xte << ',' << r.l_policy << ',' << r.l_value << ','
        << r.l_imitation << ',' << r.mean_planned_xte << ',' << r.learning_rate << '\n';
  }
}

namespace detail {

// Runs the clipped-surrogate epochs over one full buffer. Returns the mean
// losses over all minibatches.
inline PpoLosses ppo_update(MlpParams& policy, MlpParams& value_net,
                            AdamState& policy_adam, AdamState& value_adam,
                            const RolloutBuffer& buf, const Advantages& adv,
                            const FinetuneConfig& cfg, double lr, std::mt19937_64& rng) {
  const RowMatrix obs = to_matrix(buf.obs);
  const RowMatrix actions = to_matrix(buf.actions);
  const RowMatrix targets = to_matrix(buf.targets);
  std::vector<std::size_t> idx(buf.size());
  PpoLosses sum;
  std::size_t batches = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t start = 0; start < idx.size(); start += cfg.minibatch_size) {
      const std::size_t end = std::min(idx.size(), start + cfg.minibatch_size);
      const std::span<const std::size_t> rows(idx.data() + start, end - start);
      PpoBatch b;
      b.obs = gather_rows(obs, rows);
      b.actions = gather_rows(actions, rows);
      b.targets = gather_rows(targets, rows);
      for (std::size_t r : rows) {
        b.old_log_probs.push_back(buf.log_probs[r]);
        b.advantages.push_back(adv.normalized[r]);
        b.returns.push_back(adv.returns[r]);
      }
      MlpGradients pg = MlpGradients::zeros_like(policy);
      MlpGradients vg = MlpGradients::zeros_like(value_net);
      const PpoLosses l = ppo_losses(policy, value_net, b, cfg.clip, cfg.weights, &pg, &vg);
      if (!std::isfinite(l.policy) || !std::isfinite(l.value) || !std::isfinite(l.imitation)) {
        throw NumericalError("fine-tuning loss became non-finite");
      }
      adam_update(policy, pg, policy_adam, lr);
      // The value rate follows the policy rate's guard-driven decay.
      const double decay = cfg.learning_rate > 0.0 ? lr / cfg.learning_rate : 0.0;
      adam_update(value_net, vg, value_adam, decay * cfg.value_learning_rate);
      sum.policy += l.policy;
      sum.entropy += l.entropy;
      sum.value += l.value;
      sum.imitation += l.imitation;
      ++batches;
    }
  }
  const double k = 1.0 / static_cast<double>(batches);
  sum.policy *= k;
  sum.entropy *= k;
  sum.value *= k;
  sum.imitation *= k;
  return sum;
}

}  // namespace detail

inline FinetuneResult finetune(MlpParams policy, MlpParams value_net,
                               std::span<const Track> tracks, const MpcConfig& realtime,
                               const FinetuneConfig& cfg, std::size_t total_steps,
                               std::uint64_t seed,
                               const std::function<void(const FinetuneLogRow&)>& on_batch = {}) {
  cfg.validate();
  realtime.validate();
  if (tracks.empty()) throw ValidationError("no tracks to fine-tune on");
  policy.validate();
  value_net.validate();
  if (policy.log_std.empty()) throw StructuralError("policy has no Gaussian head");
  if (policy.output_dim() != 2 * static_cast<std::size_t>(realtime.horizon)) {
    throw StructuralError("policy output does not match the horizon");
  }
  if (value_net.output_dim() != 1 || value_net.input_dim() != policy.input_dim()) {
    throw StructuralError("value network shape does not match the policy");
  }

  std::mt19937_64 rng(seed);
  AdamState policy_adam, value_adam;
  double lr = cfg.learning_rate;
  std::optional<double> reference_planned_xte;
  int consecutive_triggers = 0;

  FinetuneResult result;
  RolloutBuffer buf;
  double sum_iterations = 0.0, sum_xte = 0.0, sum_planned = 0.0;

  std::size_t track_id = 0;
  const Track* track = nullptr;
  VehicleState s;
  std::optional<EpisodeTracker> tracker;
  ControlInput applied{};
  auto begin_episode = [&]() {
    track = &tracks[track_id % tracks.size()];
    ++track_id;
    s = start_state(*track, realtime.v_ref);
    tracker.emplace(*track, s, cfg.max_episode_steps);
    applied = {};
    ++result.episodes;
  };
  begin_episode();

  for (std::size_t t = 0; t < total_steps; ++t) {
    const std::vector<double> x = observe(*track, s, cfg.observation).to_vector();
    PolicyOutput out = sample_action(policy, x, rng);
    std::vector<double> guess_z = out.action;
    for (double& z : guess_z) z = std::clamp(z, -1.0, 1.0);
    const ControlSequence guess = decode_action(guess_z, realtime.vehicle);
    const MpcSolution sol =
        solve(*track, s, realtime, WarmStartSource::kPolicy, &guess, nullptr, applied);

    buf.obs.push_back(x);
    buf.actions.push_back(std::move(out.action));
    buf.log_probs.push_back(out.log_prob);
    buf.rewards.push_back(compute_reward(sol, cfg.time_mode, cfg.t_iter_nominal));
    buf.values.push_back(forward(value_net, x)[0]);
    buf.targets.push_back(normalize_sequence(sol.sequence, realtime.vehicle));

    applied = sol.sequence.front();
    s = step(s, applied, realtime.vehicle);
    const auto status = tracker->advance(s);
    const bool done = status.end != EpisodeEnd::kRunning;
    buf.dones.push_back(done);
    sum_iterations += sol.iterations_used;
    sum_xte += status.xte;
    sum_planned += sol.planned_xte_sum;
    if (done) {
      if (status.end == EpisodeEnd::kOffTrack) ++result.off_track_episodes;
      begin_episode();
    }

    if (buf.size() == cfg.steps_per_batch || t + 1 == total_steps) {
      buf.last_value = forward(value_net, observe(*track, s, cfg.observation).to_vector())[0];
      const double n = static_cast<double>(buf.size());
      FinetuneLogRow row;
      row.batch = result.log.size();
      row.mean_reward = std::accumulate(buf.rewards.begin(), buf.rewards.end(), 0.0) / n;
      row.mean_iterations = sum_iterations / n;
      row.mean_xte = sum_xte / n;
      row.mean_planned_xte = sum_planned / n;

      if (!reference_planned_xte) {
        reference_planned_xte = row.mean_planned_xte;
      } else if (row.mean_planned_xte > cfg.divergence_factor * *reference_planned_xte) {
        lr *= 0.5;
        if (++consecutive_triggers >= cfg.divergence_patience) {
          throw NumericalError("fine-tuning diverged: batch mean planned xte " +
                               std::to_string(row.mean_planned_xte) + " exceeded " +
                               std::to_string(cfg.divergence_factor) +
                               "x the first batch's level " +
                               std::to_string(cfg.divergence_patience) +
                               " times in a row");
        }
      } else {
        consecutive_triggers = 0;
      }
      row.learning_rate = lr;

      const Advantages adv = gae_advantages(buf, cfg.gamma, cfg.gae_lambda);
      const PpoLosses l = detail::ppo_update(policy, value_net, policy_adam, value_adam,
                                             buf, adv, cfg, lr, rng);
      row.l_policy = l.policy;
      row.l_value = l.value;
      row.l_imitation = l.imitation;
      result.log.push_back(row);
      if (on_batch) on_batch(row);
      buf.clear();
      sum_iterations = sum_xte = sum_planned = 0.0;
    }
  }
  result.policy = std::move(policy);
  result.value_net = std::move(value_net);
  return result;
}

}  // namespace wsmpc

#endif  // WSMPC_LEARN_HPP_
