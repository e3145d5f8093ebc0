#ifndef WSMPC_VEHICLE_HPP_
#define WSMPC_VEHICLE_HPP_

// Kinematic bicycle model, explicit Euler, all updates from the pre-step
// state.

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "wsmpc/errors.hpp"
#include "wsmpc/trackgeom.hpp"

namespace wsmpc {

struct VehicleState {
  double x = 0.0;
  double y = 0.0;
  double yaw = 0.0;
  double v = 0.0;

  Vec2 position() const { return {x, y}; }
};

struct ControlInput {
  double accel = 0.0;
  double steer = 0.0;

  bool operator==(const ControlInput&) const = default;
};

using ControlSequence = std::vector<ControlInput>;

struct VehicleSpec {
  double wheelbase = 2.89;
  double dt = 0.02;
  double accel_min = -5.0;
  double accel_max = 5.0;
  double steer_min = -0.52;
  double steer_max = 0.52;

  void validate() const {
    if (!(wheelbase > 0.0)) throw ValidationError("wheelbase must be positive");
    if (!(dt > 0.0)) throw ValidationError("dt must be positive");
    if (!(accel_min < accel_max)) {
      throw ValidationError("accel bounds must satisfy min < max");
    }
    if (!(steer_min < steer_max)) {
      throw ValidationError("steer bounds must satisfy min < max");
    }
  }

  bool admits(const ControlInput& u) const {
    return u.accel >= accel_min && u.accel <= accel_max &&
           u.steer >= steer_min && u.steer <= steer_max;
  }

  ControlInput clamp(const ControlInput& u) const {
    return {std::fmin(std::fmax(u.accel, accel_min), accel_max),
            std::fmin(std::fmax(u.steer, steer_min), steer_max)};
  }
};

inline VehicleState step_unchecked(const VehicleState& s, const ControlInput& u,
                                   const VehicleSpec& spec) {
  VehicleState n;
  n.x = s.x + s.v * std::cos(s.yaw) * spec.dt;
  n.y = s.y + s.v * std::sin(s.yaw) * spec.dt;
  n.yaw = wrap_angle(s.yaw + s.v / spec.wheelbase * std::tan(u.steer) * spec.dt);
  n.v = s.v + u.accel * spec.dt;
  return n;
}

inline VehicleState step(const VehicleState& s, const ControlInput& u,
                         const VehicleSpec& spec) {
  if (!spec.admits(u)) {
    throw ValidationError("control input (" + std::to_string(u.accel) + ", " +
                          std::to_string(u.steer) + ") outside vehicle bounds");
  }
  return step_unchecked(s, u, spec);
}

// Writes the H+1 states visited by `seq` into `out` (resized as needed).
inline void rollout_into(const VehicleState& s, std::span<const ControlInput> seq,
                         const VehicleSpec& spec, std::vector<VehicleState>& out) {
  out.resize(seq.size() + 1);
  out[0] = s;
  for (std::size_t k = 0; k < seq.size(); ++k) {
    out[k + 1] = step(out[k], seq[k], spec);
  }
}

inline std::vector<VehicleState> rollout(const VehicleState& s,
                                         std::span<const ControlInput> seq,
                                         const VehicleSpec& spec) {
  std::vector<VehicleState> out;
  rollout_into(s, seq, spec, out);
  return out;
}

}  // namespace wsmpc

#endif  // WSMPC_VEHICLE_HPP_
