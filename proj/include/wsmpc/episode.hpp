#ifndef WSMPC_EPISODE_HPP_
#define WSMPC_EPISODE_HPP_

// Episode start states and termination bookkeeping shared by demonstration
// collection, fine-tuning, and evaluation.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>

#include "wsmpc/errors.hpp"
#include "wsmpc/trackgeom.hpp"
#include "wsmpc/vehicle.hpp"

namespace wsmpc {

struct StartPerturbation {
  double lateral = 0.0;  // meters, uniform in [-lateral, lateral]
  double yaw = 0.0;      // radians, uniform in [-yaw, yaw]
};

// Waypoint 0, heading along the first segment, at speed v. A nonzero
// perturbation shifts the start sideways and rotates it, drawn from `seed`.
inline VehicleState start_state(const Track& track, double v,
                                const StartPerturbation& perturb = {},
                                std::uint64_t seed = 0) {
  const double heading = segment_heading(track, 0);
  VehicleState s{track[0].x, track[0].y, heading, v};
  if (perturb.lateral > 0.0 || perturb.yaw > 0.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    const double d = perturb.lateral * unit(rng);
    const double dyaw = perturb.yaw * unit(rng);
    s.x -= d * std::sin(heading);
    s.y += d * std::cos(heading);
    s.yaw = wrap_angle(heading + dyaw);
  }
  return s;
}

enum class EpisodeEnd { kRunning, kOffTrack, kLapCompleted, kStepCap };

inline const char* to_string(EpisodeEnd e) {
  switch (e) {
    case EpisodeEnd::kRunning: return "running";
    case EpisodeEnd::kOffTrack: return "off_track";
    case EpisodeEnd::kLapCompleted: return "lap_completed";
    case EpisodeEnd::kStepCap: return "step_cap";
  }
  return "unknown";
}

// Follows one episode step by step. Off-track takes precedence over lap
// completion when both happen on the same step.
class EpisodeTracker {
 public:
  EpisodeTracker(const Track& track, const VehicleState& start,
                 std::size_t max_steps)
      : track_(track),
        index_(track.nearest_index(start.position())),
        max_steps_(max_steps) {
    if (max_steps == 0) throw ValidationError("max_steps must be >= 1");
  }

  struct StepStatus {
    double xte = 0.0;
    EpisodeEnd end = EpisodeEnd::kRunning;
  };

  // Call with the state reached after each applied input.
  StepStatus advance(const VehicleState& s) {
    ++steps_;
    StepStatus st;
    const Vec2 pos = s.position();
    st.xte = cross_track_error(track_, pos);
    const LapProgress lp = lap_progress(track_, pos, index_);
    index_ = lp.index;
    if (off_track(track_, pos, st.xte)) {
      st.end = EpisodeEnd::kOffTrack;
    } else if (lp.lap_completed) {
      st.end = EpisodeEnd::kLapCompleted;
    } else if (steps_ >= max_steps_) {
      st.end = EpisodeEnd::kStepCap;
    }
    return st;
  }

  std::size_t steps() const { return steps_; }
  std::size_t progress_index() const { return index_; }

 private:
  const Track& track_;
  std::size_t index_;
  std::size_t max_steps_;
  std::size_t steps_ = 0;
};

}  // namespace wsmpc

#endif  // WSMPC_EPISODE_HPP_
