#ifndef WSMPC_ACTION_CODEC_HPP_
#define WSMPC_ACTION_CODEC_HPP_

// Interleaved (accel_0, steer_0, accel_1, steer_1, ...) layout shared by the
// MPC decision vector and the policy output, in normalized [-1, 1] units.

#include <algorithm>
#include <cstddef>
#include <span>
#include <vector>

#include "wsmpc/dfo.hpp"
#include "wsmpc/errors.hpp"
#include "wsmpc/vehicle.hpp"

namespace wsmpc {

inline std::vector<Bounds> control_bounds(const VehicleSpec& spec,
                                          std::size_t horizon) {
  std::vector<Bounds> b;
  b.reserve(2 * horizon);
  for (std::size_t k = 0; k < horizon; ++k) {
    b.push_back({spec.accel_min, spec.accel_max});
    b.push_back({spec.steer_min, spec.steer_max});
  }
  return b;
}

inline double normalize_scalar(double v, double lo, double hi) {
  return (2.0 * v - (lo + hi)) / (hi - lo);
}

inline double denormalize_scalar(double z, double lo, double hi) {
  return 0.5 * (lo + hi) + 0.5 * (hi - lo) * z;
}

inline std::vector<double> normalize_sequence(std::span<const ControlInput> seq,
                                              const VehicleSpec& spec) {
  std::vector<double> z(2 * seq.size());
  for (std::size_t k = 0; k < seq.size(); ++k) {
    z[2 * k] = normalize_scalar(seq[k].accel, spec.accel_min, spec.accel_max);
    z[2 * k + 1] = normalize_scalar(seq[k].steer, spec.steer_min, spec.steer_max);
  }
  return z;
}

// Maps a normalized vector onto control bounds. Components outside [-1, 1]
// are clamped first; their number is added to *clamped.
inline void decode_action_into(std::span<const double> z, const VehicleSpec& spec,
                               ControlSequence& out,
                               std::size_t* clamped = nullptr) {
  if (z.size() % 2 != 0) {
    throw ValidationError("normalized action length must be even");
  }
  out.resize(z.size() / 2);
  std::size_t hits = 0;
  const auto unit = [&hits](double v) {
    if (v < -1.0 || v > 1.0) {
      ++hits;
      return std::clamp(v, -1.0, 1.0);
    }
    return v;
  };
  for (std::size_t k = 0; k < out.size(); ++k) {
    out[k].accel = std::clamp(
        denormalize_scalar(unit(z[2 * k]), spec.accel_min, spec.accel_max),
        spec.accel_min, spec.accel_max);
    out[k].steer = std::clamp(
        denormalize_scalar(unit(z[2 * k + 1]), spec.steer_min, spec.steer_max),
        spec.steer_min, spec.steer_max);
  }
  if (clamped != nullptr) *clamped += hits;
}

inline ControlSequence decode_action(std::span<const double> z,
                                     const VehicleSpec& spec,
                                     std::size_t* clamped = nullptr) {
  ControlSequence out;
  decode_action_into(z, spec, out, clamped);
  return out;
}

}  // namespace wsmpc

#endif  // WSMPC_ACTION_CODEC_HPP_
