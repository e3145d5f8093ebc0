#ifndef WSMPC_MPC_HPP_
#define WSMPC_MPC_HPP_

// Receding-horizon path-tracking problem over the bicycle model, solved with
// the derivative-free minimizer from a chosen warm start.

#include <algorithm>
#include <chrono>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "wsmpc/action_codec.hpp"
#include "wsmpc/dfo.hpp"
#include "wsmpc/errors.hpp"
#include "wsmpc/trackgeom.hpp"
#include "wsmpc/vehicle.hpp"

namespace wsmpc {

struct CostWeights {
  double xte = 2000.0;         // w0
  double heading = 100.0;      // w1
  double speed = 60.0;         // w2
  double steer_rate = 2.0;     // w3
  double throttle_rate = 20.0; // w4
};

struct MpcConfig {
  int horizon = 25;
  CostWeights weights;
  double v_ref = 10.0;
  int max_iterations = 50;
  // Stop once the incumbent plan's accumulated xte drops below this.
  std::optional<double> early_stop_threshold = 0.1;
  VehicleSpec vehicle;
  XteMode xte_mode = XteMode::kNearestWaypoint;
  double rho_begin = 0.5;
  double rho_end = 1e-4;

  void validate() const {
    if (horizon < 1) throw ValidationError("horizon must be >= 1");
    const CostWeights& w = weights;
    if (w.xte < 0 || w.heading < 0 || w.speed < 0 || w.steer_rate < 0 ||
        w.throttle_rate < 0) {
      throw ValidationError("cost weights must be non-negative");
    }
    if (!std::isfinite(v_ref)) throw ValidationError("v_ref must be finite");
    if (max_iterations < 1) throw ValidationError("max_iterations must be >= 1");
    if (early_stop_threshold && !(*early_stop_threshold > 0.0)) {
      throw ValidationError("early stop threshold must be positive");
    }
    vehicle.validate();
  }
};

// Demonstration expert: long budget, never stops early.
inline MpcConfig expert_config() {
  MpcConfig c;
  c.max_iterations = 300;
  c.early_stop_threshold = std::nullopt;
  return c;
}

// Real-time controller: 50 evaluations, early stop at 0.1 m planned xte.
inline MpcConfig realtime_config() {
  MpcConfig c;
  c.max_iterations = 50;
  c.early_stop_threshold = 0.1;
  return c;
}

enum class WarmStartSource { kZeros, kPreviousShifted, kPolicy };

inline const char* to_string(WarmStartSource s) {
  switch (s) {
    case WarmStartSource::kZeros: return "zeros";
    case WarmStartSource::kPreviousShifted: return "previous_shifted";
    case WarmStartSource::kPolicy: return "policy";
  }
  return "unknown";
}

inline WarmStartSource warm_start_from_string(const std::string& s) {
  if (s == "zeros") return WarmStartSource::kZeros;
  if (s == "previous_shifted" || s == "previous") {
    return WarmStartSource::kPreviousShifted;
  }
  if (s == "policy") return WarmStartSource::kPolicy;
  throw ValidationError("unknown warm start '" + s + "'");
}

struct MpcSolution {
  ControlSequence sequence;
  int iterations_used = 0;
  double final_cost = 0.0;
  bool early_stopped = false;
  double planned_xte_sum = 0.0;
  double solve_time = 0.0;  // seconds, informational
};

// Cost and planned-xte evaluation for one planning instant. Holds scratch
// buffers, so an instance must not be shared between threads.
class MpcProblem {
 public:
  MpcProblem(const Track& track, const VehicleState& state,
             const MpcConfig& config, ControlInput previous_applied = {})
      : track_(track),
        state_(state),
        config_(config),
        previous_(previous_applied) {}

  double cost(std::span<const ControlInput> seq) {
    check_length(seq);
    rollout_into(state_, seq, config_.vehicle, trajectory_);
    const CostWeights& w = config_.weights;
    double total = 0.0;
    ControlInput prev = previous_;
    for (std::size_t i = 0; i < seq.size(); ++i) {
      const VehicleState& s = trajectory_[i];
      const PathProjection p = project(track_, s.position(), config_.xte_mode);
      const double eth = std::abs(wrap_angle(s.yaw - p.path_heading));
      const double dv = s.v - config_.v_ref;
      const double dsteer = seq[i].steer - prev.steer;
      const double daccel = seq[i].accel - prev.accel;
      total += w.xte * p.distance * p.distance + w.heading * eth * eth +
               w.speed * dv * dv + w.steer_rate * dsteer * dsteer +
               w.throttle_rate * daccel * daccel;
      prev = seq[i];
    }
    return total;
  }

  // Accumulated xte over the H states the plan leads to.
  double planned_xte_sum(std::span<const ControlInput> seq) {
    check_length(seq);
    rollout_into(state_, seq, config_.vehicle, trajectory_);
    double total = 0.0;
    for (std::size_t i = 1; i < trajectory_.size(); ++i) {
      total += cross_track_error(track_, trajectory_[i].position(),
                                 config_.xte_mode);
    }
    return total;
  }

  double cost_normalized(std::span<const double> z) {
    decode_action_into(z, config_.vehicle, decoded_);
    return cost(decoded_);
  }

  double planned_xte_sum_normalized(std::span<const double> z) {
    decode_action_into(z, config_.vehicle, decoded_);
    return planned_xte_sum(decoded_);
  }

 private:
  void check_length(std::span<const ControlInput> seq) const {
    if (seq.size() != static_cast<std::size_t>(config_.horizon)) {
      throw ValidationError("control sequence has length " +
                            std::to_string(seq.size()) + ", horizon is " +
                            std::to_string(config_.horizon));
    }
  }

  const Track& track_;
  VehicleState state_;
  const MpcConfig& config_;
  ControlInput previous_;
  std::vector<VehicleState> trajectory_;
  ControlSequence decoded_;
};

// The smoothness terms of the first step compare against previous_applied,
// the input applied at the preceding control step (zero at episode start).
inline double mpc_cost(const Track& track, const VehicleState& state,
                       std::span<const ControlInput> seq, const MpcConfig& config,
                       ControlInput previous_applied = {}) {
  return MpcProblem(track, state, config, previous_applied).cost(seq);
}

inline double planned_xte_sum(const Track& track, const VehicleState& state,
                              std::span<const ControlInput> seq,
                              const MpcConfig& config) {
  return MpcProblem(track, state, config).planned_xte_sum(seq);
}

// Drops the first input and repeats the last one.
inline ControlSequence shift_previous(const MpcSolution& previous) {
  const ControlSequence& s = previous.sequence;
  if (s.empty()) throw ValidationError("previous solution is empty");
  ControlSequence out(s.begin() + 1, s.end());
  out.push_back(s.back());
  return out;
}

inline MpcSolution solve(const Track& track, const VehicleState& state,
                         const MpcConfig& config, WarmStartSource warm_start,
                         const ControlSequence* policy_guess = nullptr,
                         const MpcSolution* previous = nullptr,
                         ControlInput previous_applied = {}) {
  config.validate();
  const auto started = std::chrono::steady_clock::now();
  const std::size_t horizon = static_cast<std::size_t>(config.horizon);

  ControlSequence guess;
  switch (warm_start) {
    case WarmStartSource::kZeros:
      guess.assign(horizon, ControlInput{});
      break;
    case WarmStartSource::kPreviousShifted:
      if (previous == nullptr) {
        throw ValidationError("previous_shifted warm start needs a previous solution");
      }
      guess = shift_previous(*previous);
      break;
    case WarmStartSource::kPolicy:
      if (policy_guess == nullptr) {
        throw ValidationError("policy warm start needs a policy guess");
      }
      guess = *policy_guess;
      break;
  }
  if (guess.size() != horizon) {
    throw ValidationError("initial guess has length " +
                          std::to_string(guess.size()) + ", horizon is " +
                          std::to_string(horizon));
  }
  for (ControlInput& u : guess) u = config.vehicle.clamp(u);
  std::vector<double> z0 = normalize_sequence(guess, config.vehicle);
  for (double& v : z0) v = std::clamp(v, -1.0, 1.0);

  MpcProblem problem(track, state, config, previous_applied);
  MpcProblem stop_check(track, state, config, previous_applied);
  SolverConfig solver;
  solver.max_iterations = config.max_iterations;
  solver.rho_begin = config.rho_begin;
  solver.rho_end = config.rho_end;

  EarlyStop early_stop;
  if (config.early_stop_threshold) {
    const double threshold = *config.early_stop_threshold;
    early_stop = [&stop_check, threshold](std::span<const double> z) {
      return stop_check.planned_xte_sum_normalized(z) < threshold;
    };
  }
  const SolverResult r = minimize(
      [&problem](std::span<const double> z) { return problem.cost_normalized(z); },
      box_constraints(2 * horizon, -1.0, 1.0), std::move(z0), solver, early_stop);

  MpcSolution sol;
  sol.sequence = decode_action(r.best_point, config.vehicle);
  sol.iterations_used = r.iterations_used;
  sol.final_cost = problem.cost(sol.sequence);
  sol.early_stopped = r.stop_reason == StopReason::kEarlyStop;
  sol.planned_xte_sum = problem.planned_xte_sum(sol.sequence);
  sol.solve_time = std::chrono::duration<double>(
                       std::chrono::steady_clock::now() - started)
                       .count();
  return sol;
}

}  // namespace wsmpc

#endif  // WSMPC_MPC_HPP_
