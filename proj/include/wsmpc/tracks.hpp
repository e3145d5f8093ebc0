#ifndef WSMPC_TRACKS_HPP_
#define WSMPC_TRACKS_HPP_

// Synthetic desk-scale tracks built from straight and constant-radius pieces.
// Closed loops are made of a half-lap pattern whose heading change is +180
// degrees, repeated twice; the point symmetry closes the loop exactly.

#include <cmath>
#include <map>
#include <numbers>
#include <string>
#include <vector>

#include "wsmpc/errors.hpp"
#include "wsmpc/trackgeom.hpp"

namespace wsmpc {

struct TrackPiece {
  double length = 0.0;          // meters of arc
  double curvature = 0.0;       // 1/m at the start, positive turns left
  double curvature_end = 0.0;   // 1/m at the end; varies linearly
};

inline TrackPiece straight_piece(double length) { return {length, 0.0, 0.0}; }

inline TrackPiece arc_piece(double radius, double degrees) {
  const double angle = degrees * std::numbers::pi / 180.0;
  const double k = (angle >= 0.0 ? 1.0 : -1.0) / radius;
  return {radius * std::abs(angle), k, k};
}

// Linear change of curvature over `length` meters.
inline TrackPiece transition_piece(double length, double from_curvature,
                                   double to_curvature) {
  return {length, from_curvature, to_curvature};
}

struct TrackStyle {
  double spacing = 0.002;     // meters between waypoints
  double half_width = 1.1;    // each side
};

namespace detail {

inline double piece_heading(const TrackPiece& p, double u) {
  return p.curvature * u +
         0.5 * (p.curvature_end - p.curvature) * u * u / p.length;
}

}  // namespace detail

// Samples the pieces every `spacing` meters of arc length (rounded so the
// length divides evenly), starting at the origin heading along +x. Positions
// are integrated with Simpson's rule; headings are exact. A loop does not
// repeat its end point; an open path includes it.
inline Track build_track(const std::vector<TrackPiece>& pieces,
                         const TrackStyle& style, bool closed = true) {
  double total = 0.0;
  for (const TrackPiece& p : pieces) {
    if (!(p.length > 0.0)) throw ValidationError("track piece length must be positive");
    total += p.length;
  }
  const std::size_t count =
      static_cast<std::size_t>(std::llround(total / style.spacing));
  if (count < 3) throw StructuralError("track too short for the spacing");
  const double ds = total / static_cast<double>(count);
  constexpr int kSub = 8;

  const std::size_t samples = closed ? count : count + 1;
  std::vector<Waypoint> wps;
  wps.reserve(samples);
  double x = 0.0, y = 0.0, h0 = 0.0;  // h0: heading at the piece start
  std::size_t piece = 0;
  double piece_start = 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < samples; ++i) {
    Waypoint w;
    w.x = x;
    w.y = y;
    w.half_width_left = style.half_width;
    w.half_width_right = style.half_width;
    wps.push_back(w);
    if (i + 1 == samples) break;

    // Integrate to the next sample, splitting at piece boundaries.
    const double target = static_cast<double>(i + 1) * ds;
    while (s < target) {
      const TrackPiece& p = pieces[piece];
      const double piece_end = piece_start + p.length;
      const double stop = (piece + 1 < pieces.size()) ? std::min(target, piece_end)
                                                      : target;
      const double a = s - piece_start;
      const double b = stop - piece_start;
      const double hh = (b - a) / kSub;
      double sx = 0.0, sy = 0.0;
      for (int k = 0; k <= kSub; ++k) {
        const double wgt = (k == 0 || k == kSub) ? 1.0 : (k % 2 ? 4.0 : 2.0);
        const double h = h0 + detail::piece_heading(p, a + k * hh);
        sx += wgt * std::cos(h);
        sy += wgt * std::sin(h);
      }
      x += sx * hh / 3.0;
      y += sy * hh / 3.0;
      s = stop;
      if (stop == piece_end && piece + 1 < pieces.size()) {
        h0 += detail::piece_heading(p, p.length);
        piece_start = piece_end;
        ++piece;
      }
    }
  }
  return Track(std::move(wps), 1.0, closed);
}

// Eases in from straight, holds `radius`, eases out. The two transitions
// take part of the total angle, so the constant-radius part is shorter.
inline void append_turn(std::vector<TrackPiece>& out, double radius,
                        double degrees, double transition) {
  const double angle = degrees * std::numbers::pi / 180.0;
  const double k = (angle >= 0.0 ? 1.0 : -1.0) / radius;
  const double held = std::abs(angle) - std::abs(k) * transition;
  if (!(held > 0.0)) throw ValidationError("turn too short for its transitions");
  out.push_back(transition_piece(transition, 0.0, k));
  out.push_back({held * radius, k, k});
  out.push_back(transition_piece(transition, k, 0.0));
}

// Repeats a half-lap pattern (net heading +180 degrees) twice.
inline Track build_symmetric_loop(std::vector<TrackPiece> half,
                                  const TrackStyle& style) {
  std::vector<TrackPiece> all = half;
  all.insert(all.end(), half.begin(), half.end());
  return build_track(all, style);
}

// Open path: episodes end on reaching the far end.
inline Track make_straight_track(const TrackStyle& style = {},
                                 double length = 200.0) {
  return build_track({straight_piece(length)}, style, false);
}

inline Track make_circle_track(const TrackStyle& style = {},
                               double radius = 12.0) {
  return build_symmetric_loop({arc_piece(radius, 180.0)}, style);
}

// Stadium with two tight 180-degree turns.
inline Track make_hairpin_track(const TrackStyle& style = {},
                                double straight = 20.0, double radius = 7.0) {
  std::vector<TrackPiece> half{straight_piece(straight)};
  append_turn(half, radius, 180.0, 3.0);
  return build_symmetric_loop(half, style);
}

// Right-left-right bends on each straight, then a wide turn.
inline Track make_s_curve_track(const TrackStyle& style = {}) {
  std::vector<TrackPiece> half{straight_piece(6.0)};
  append_turn(half, 10.0, -45.0, 2.0);
  append_turn(half, 10.0, 90.0, 2.0);
  append_turn(half, 10.0, -45.0, 2.0);
  half.push_back(straight_piece(6.0));
  append_turn(half, 10.0, 180.0, 3.0);
  return build_symmetric_loop(half, style);
}

// Oval with a gentle left-right-left kink on each straight.
inline Track make_chicane_track(const TrackStyle& style = {}) {
  std::vector<TrackPiece> half{straight_piece(8.0)};
  append_turn(half, 10.0, 30.0, 2.0);
  append_turn(half, 10.0, -60.0, 2.0);
  append_turn(half, 10.0, 30.0, 2.0);
  half.push_back(straight_piece(8.0));
  append_turn(half, 9.0, 180.0, 3.0);
  return build_symmetric_loop(half, style);
}

inline std::vector<std::string> synthetic_track_names() {
  return {"straight", "circle", "s_curve", "hairpin", "chicane"};
}

inline Track make_synthetic_track(const std::string& name,
                                  const TrackStyle& style = {}) {
  if (name == "straight") return make_straight_track(style);
  if (name == "circle") return make_circle_track(style);
  if (name == "s_curve") return make_s_curve_track(style);
  if (name == "hairpin") return make_hairpin_track(style);
  if (name == "chicane") return make_chicane_track(style);
  throw ValidationError("unknown synthetic track '" + name + "'");
}

}  // namespace wsmpc

#endif  // WSMPC_TRACKS_HPP_
