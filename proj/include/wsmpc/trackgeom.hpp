#ifndef WSMPC_TRACKGEOM_HPP_
#define WSMPC_TRACKGEOM_HPP_

// Waypoint tracks and path-relative geometry: nearest waypoint, cross-track
// error, heading error, lap progress and the 10-waypoint curvature score.

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <istream>
#include <limits>
#include <numbers>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "wsmpc/errors.hpp"

namespace wsmpc {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

inline double squared_distance(Vec2 a, Vec2 b) {
  const double dx = a.x - b.x;
  const double dy = a.y - b.y;
  return dx * dx + dy * dy;
}

// Wraps an angle into (-pi, pi].
inline double wrap_angle(double a) {
  constexpr double kTwoPi = 2.0 * std::numbers::pi;
  double r = std::remainder(a, kTwoPi);
  if (r <= -std::numbers::pi) r += kTwoPi;
  return r;
}

struct Waypoint {
  double x = 0.0;
  double y = 0.0;
  double half_width_left = 0.0;
  double half_width_right = 0.0;

  Vec2 position() const { return {x, y}; }
};

enum class XteMode {
  kNearestWaypoint,  // distance to the closest waypoint
  kSegment,          // distance to the closest polyline segment
};

struct PathProjection {
  std::size_t nearest_index = 0;
  double distance = 0.0;
  double path_heading = 0.0;
};

struct LapProgress {
  std::size_t index = 0;
  bool lap_completed = false;
};

// Waypoint loop, or an open path when `closed` is false (the straight test
// track). Immutable after construction; every query is const and safe to
// call concurrently.
class Track {
 public:
  explicit Track(std::vector<Waypoint> waypoints, double scale_applied = 1.0,
                 bool closed = true)
      : waypoints_(std::move(waypoints)),
        scale_applied_(scale_applied),
        closed_(closed) {
    validate();
    build_arc_length();
    build_grid();
  }

  std::size_t size() const { return waypoints_.size(); }
  bool closed() const { return closed_; }
  double scale_applied() const { return scale_applied_; }
  std::span<const Waypoint> waypoints() const { return waypoints_; }
  const Waypoint& operator[](std::size_t i) const { return waypoints_[i]; }
  Vec2 point(std::size_t i) const { return waypoints_[i].position(); }

  // Open paths stop at the last waypoint instead of wrapping.
  std::size_t next(std::size_t i) const { return advance(i, 1); }
  std::size_t advance(std::size_t i, std::size_t k) const {
    return closed_ ? (i + k) % size() : std::min(i + k, size() - 1);
  }

  // Endpoints of the segment leaving waypoint i; on an open path the last
  // waypoint reuses the segment arriving at it.
  std::pair<std::size_t, std::size_t> segment_from(std::size_t i) const {
    if (!closed_ && i + 1 >= size()) return {size() - 2, size() - 1};
    return {i, next(i)};
  }

  // Arc length from waypoint 0 to waypoint i along the polyline.
  double arc_length(std::size_t i) const { return arc_[i]; }
  double total_length() const { return total_length_; }
  double max_segment_length() const { return max_segment_; }

  // Index of the waypoint whose arc position is closest to `s` (taken modulo
  // the lap length, or clamped to the ends of an open path).
  std::size_t index_at_arc_length(double s) const {
    if (closed_) {
      s = std::fmod(s, total_length_);
      if (s < 0.0) s += total_length_;
    } else {
      s = std::clamp(s, 0.0, total_length_);
    }
    auto it = std::upper_bound(arc_.begin(), arc_.end(), s);
    const std::size_t hi = static_cast<std::size_t>(it - arc_.begin());
    const std::size_t lo = hi - 1;
    const double s_hi = hi < size() ? arc_[hi] : total_length_;
    const std::size_t hi_index = hi < size() ? hi : 0;
    return (s - arc_[lo] <= s_hi - s) ? lo : hi_index;
  }

  // Exact Euclidean nearest waypoint; ties go to the lowest index.
  std::size_t nearest_index(Vec2 p) const {
    std::size_t best = 0;
    double best_d2 = std::numeric_limits<double>::infinity();
    const auto consider = [&](std::uint32_t idx) {
      const double d2 = squared_distance(p, point(idx));
      if (d2 < best_d2 || (d2 == best_d2 && idx < best)) {
        best_d2 = d2;
        best = idx;
      }
    };
    const long cx = cell_coord(p.x, min_x_);
    const long cy = cell_coord(p.y, min_y_);
    const long max_ring = ring_limit(cx, cy);
    for (long r = 0; r <= max_ring; ++r) {
      visit_ring(cx, cy, r, consider);
      // Every cell of ring r+1 or beyond is at least r cells away.
      const double reach = static_cast<double>(r) * cell_;
      if (best_d2 < std::numeric_limits<double>::infinity() &&
          best_d2 < reach * reach) {
        break;
      }
    }
    return best;
  }

  // Calls fn(index) for every waypoint within `radius` of p (possibly more).
  template <typename Fn>
  void for_each_near(Vec2 p, double radius, Fn&& fn) const {
    const long cx = cell_coord(p.x, min_x_);
    const long cy = cell_coord(p.y, min_y_);
    const long rings =
        std::min(ring_limit(cx, cy), static_cast<long>(radius / cell_) + 1);
    for (long r = 0; r <= rings; ++r) visit_ring(cx, cy, r, fn);
  }

 private:
  void validate() const {
    if (waypoints_.size() < 3) {
      throw StructuralError("track needs at least 3 waypoints, got " +
                            std::to_string(waypoints_.size()));
    }
    if (!(scale_applied_ > 0.0) || !std::isfinite(scale_applied_)) {
      throw ValidationError("track scale must be positive");
    }
    for (std::size_t i = 0; i < waypoints_.size(); ++i) {
      const Waypoint& w = waypoints_[i];
      if (!std::isfinite(w.x) || !std::isfinite(w.y)) {
        throw ValidationError("waypoint " + std::to_string(i) +
                              " has non-finite coordinates");
      }
      if (!(w.half_width_left > 0.0) || !(w.half_width_right > 0.0) ||
          !std::isfinite(w.half_width_left) ||
          !std::isfinite(w.half_width_right)) {
        throw ValidationError("waypoint " + std::to_string(i) +
                              " has a non-positive width");
      }
      const Waypoint& n = waypoints_[(i + 1) % waypoints_.size()];
      if (i + 1 < waypoints_.size() && w.x == n.x && w.y == n.y) {
        throw StructuralError("waypoints " + std::to_string(i) + " and " +
                              std::to_string(i + 1) + " coincide");
      }
    }
    const Waypoint& first = waypoints_.front();
    const Waypoint& last = waypoints_.back();
    if (closed_ && first.x == last.x && first.y == last.y) {
      throw StructuralError(
          "first and last waypoint coincide; the closing segment is implicit");
    }
  }

  void build_arc_length() {
    arc_.resize(size());
    double s = 0.0;
    max_segment_ = 0.0;
    for (std::size_t i = 0; i < size(); ++i) {
      arc_[i] = s;
      if (!closed_ && i + 1 == size()) break;
      const double len = std::sqrt(squared_distance(point(i), point(next(i))));
      max_segment_ = std::max(max_segment_, len);
      s += len;
    }
    total_length_ = s;
  }

  // Uniform bucket grid in CSR layout; indices inside a cell are ascending.
  void build_grid() {
    double max_x = -std::numeric_limits<double>::infinity();
    double max_y = max_x;
    min_x_ = std::numeric_limits<double>::infinity();
    min_y_ = min_x_;
    for (const Waypoint& w : waypoints_) {
      min_x_ = std::min(min_x_, w.x);
      min_y_ = std::min(min_y_, w.y);
      max_x = std::max(max_x, w.x);
      max_y = std::max(max_y, w.y);
    }
    const double extent = std::max({max_x - min_x_, max_y - min_y_, 1e-9});
    const double mean_spacing = total_length_ / static_cast<double>(size());
    cell_ = std::max(8.0 * mean_spacing, extent / 2048.0);
    nx_ = static_cast<long>((max_x - min_x_) / cell_) + 1;
    ny_ = static_cast<long>((max_y - min_y_) / cell_) + 1;
    std::vector<std::uint32_t> counts(static_cast<std::size_t>(nx_ * ny_) + 1,
                                      0);
    for (const Waypoint& w : waypoints_) {
      ++counts[cell_index(cell_coord(w.x, min_x_), cell_coord(w.y, min_y_)) +
               1];
    }
    for (std::size_t c = 1; c < counts.size(); ++c) counts[c] += counts[c - 1];
    cell_start_ = counts;
    cell_items_.resize(size());
    for (std::size_t i = 0; i < size(); ++i) {
      const std::size_t c = cell_index(cell_coord(waypoints_[i].x, min_x_),
                                       cell_coord(waypoints_[i].y, min_y_));
      cell_items_[counts[c]++] = static_cast<std::uint32_t>(i);
    }
  }

  long cell_coord(double v, double origin) const {
    return static_cast<long>(std::floor((v - origin) / cell_));
  }

  std::size_t cell_index(long cx, long cy) const {
    return static_cast<std::size_t>(cy * nx_ + cx);
  }

  // Smallest ring radius that covers the whole grid from (cx, cy).
  long ring_limit(long cx, long cy) const {
    return std::max({std::abs(cx), std::abs(nx_ - 1 - cx), std::abs(cy),
                     std::abs(ny_ - 1 - cy)});
  }

  template <typename Fn>
  void visit_cell(long cx, long cy, Fn& fn) const {
    if (cx < 0 || cy < 0 || cx >= nx_ || cy >= ny_) return;
    const std::size_t c = cell_index(cx, cy);
    for (std::uint32_t k = cell_start_[c]; k < cell_start_[c + 1]; ++k) {
      fn(cell_items_[k]);
    }
  }

  template <typename Fn>
  void visit_ring(long cx, long cy, long r, Fn& fn) const {
    if (r == 0) {
      visit_cell(cx, cy, fn);
      return;
    }
    for (long dx = -r; dx <= r; ++dx) {
      visit_cell(cx + dx, cy - r, fn);
      visit_cell(cx + dx, cy + r, fn);
    }
    for (long dy = -r + 1; dy <= r - 1; ++dy) {
      visit_cell(cx - r, cy + dy, fn);
      visit_cell(cx + r, cy + dy, fn);
    }
  }

  std::vector<Waypoint> waypoints_;
  double scale_applied_;
  bool closed_;
  std::vector<double> arc_;
  double total_length_ = 0.0;
  double max_segment_ = 0.0;
  double min_x_ = 0.0;
  double min_y_ = 0.0;
  double cell_ = 1.0;
  long nx_ = 1;
  long ny_ = 1;
  std::vector<std::uint32_t> cell_start_;
  std::vector<std::uint32_t> cell_items_;
};

namespace detail {

inline std::string trim(std::string s) {
  const auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) out.push_back(trim(field));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline double parse_number(const std::string& field, std::size_t line) {
  if (field.empty()) throw ParseError("empty field", line);
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(field, &used);
  } catch (const std::exception&) {
    throw ParseError("not a number: '" + field + "'", line);
  }
  if (used != field.size()) {
    throw ParseError("trailing characters in '" + field + "'", line);
  }
  return v;
}

}  // namespace detail

// Comment line marking a file as an open path rather than a loop.
inline constexpr const char* kOpenPathMarker = "open path";

// Reads the racetrack CSV format: columns x_m, y_m, w_tr_right_m,
// w_tr_left_m. The header may be a plain row or a '#' comment row (as in the
// public racetrack database); other '#' lines are ignored except the open
// path marker. Every coordinate and width is multiplied by `scale`.
inline Track load_track(std::istream& in, double scale = 1.0) {
  if (!(scale > 0.0) || !std::isfinite(scale)) {
    throw ValidationError("scale must be positive");
  }
  static constexpr std::array<const char*, 4> kColumns = {
      "x_m", "y_m", "w_tr_right_m", "w_tr_left_m"};
  std::array<int, 4> column{-1, -1, -1, -1};
  bool have_header = false;
  bool closed = true;
  std::size_t width = 0;
  std::vector<Waypoint> wps;
  std::string line;
  std::size_t line_no = 0;

  const auto try_header = [&](const std::string& text) {
    const auto fields = detail::split_csv(text);
    std::array<int, 4> found{-1, -1, -1, -1};
    for (std::size_t f = 0; f < fields.size(); ++f) {
      for (std::size_t c = 0; c < kColumns.size(); ++c) {
        if (fields[f] == kColumns[c]) found[c] = static_cast<int>(f);
      }
    }
    if (std::find(found.begin(), found.end(), -1) != found.end()) return false;
    column = found;
    width = fields.size();
    have_header = true;
    return true;
  };

  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::string t = detail::trim(line);
    if (t.empty()) continue;
    if (t.front() == '#') {
      const std::string text = detail::trim(t.substr(1));
      if (text == kOpenPathMarker) {
        closed = false;
      } else if (!have_header) {
        try_header(text);
      }
      continue;
    }
    if (!have_header) {
      if (!try_header(t)) {
        throw ParseError("expected header naming x_m, y_m, w_tr_right_m, "
                         "w_tr_left_m",
                         line_no);
      }
      continue;
    }
    const auto fields = detail::split_csv(t);
    if (fields.size() != width) {
      throw ParseError("expected " + std::to_string(width) + " fields, got " +
                           std::to_string(fields.size()),
                       line_no);
    }
    Waypoint w;
    w.x = detail::parse_number(fields[column[0]], line_no) * scale;
    w.y = detail::parse_number(fields[column[1]], line_no) * scale;
    w.half_width_right = detail::parse_number(fields[column[2]], line_no) * scale;
    w.half_width_left = detail::parse_number(fields[column[3]], line_no) * scale;
    if (!(w.half_width_left > 0.0) || !(w.half_width_right > 0.0)) {
      throw ValidationError("line " + std::to_string(line_no) +
                            ": track widths must be positive");
    }
    wps.push_back(w);
  }
  if (!have_header) throw ParseError("missing header row");
  return Track(std::move(wps), scale, closed);
}

inline void save_track(std::ostream& out, const Track& track) {
  if (!track.closed()) out << "# " << kOpenPathMarker << '\n';
  out << "# x_m,y_m,w_tr_right_m,w_tr_left_m\n";
  out.precision(17);
  for (const Waypoint& w : track.waypoints()) {
    out << w.x << ',' << w.y << ',' << w.half_width_right << ','
        << w.half_width_left << '\n';
  }
}

inline std::size_t nearest_waypoint_index(const Track& track, Vec2 pos) {
  return track.nearest_index(pos);
}

inline double point_segment_distance(Vec2 p, Vec2 a, Vec2 b) {
  const double ex = b.x - a.x;
  const double ey = b.y - a.y;
  const double len2 = ex * ex + ey * ey;
  double t = len2 > 0.0 ? ((p.x - a.x) * ex + (p.y - a.y) * ey) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return std::sqrt(squared_distance(p, {a.x + t * ex, a.y + t * ey}));
}

// Unsigned distance from pos to the path.
inline double cross_track_error(const Track& track, Vec2 pos,
                                XteMode mode = XteMode::kNearestWaypoint) {
  const std::size_t i = track.nearest_index(pos);
  const double d_wp = std::sqrt(squared_distance(pos, track.point(i)));
  if (mode == XteMode::kNearestWaypoint) return d_wp;
  // A segment closer than d_wp has an endpoint within d_wp + its length.
  double best = d_wp;
  const double radius = d_wp + track.max_segment_length();
  const std::size_t n = track.size();
  const bool closed = track.closed();
  track.for_each_near(pos, radius, [&](std::uint32_t k) {
    if (closed || k > 0) {
      const std::size_t prev = (k + n - 1) % n;
      best = std::min(best, point_segment_distance(pos, track.point(prev),
                                                   track.point(k)));
    }
    if (closed || k + 1 < n) {
      best = std::min(best, point_segment_distance(pos, track.point(k),
                                                   track.point(track.next(k))));
    }
  });
  return best;
}

// Direction of the segment leaving waypoint i.
inline double segment_heading(const Track& track, std::size_t i) {
  const auto [ia, ib] = track.segment_from(i);
  const Vec2 a = track.point(ia);
  const Vec2 b = track.point(ib);
  return std::atan2(b.y - a.y, b.x - a.x);
}

// |yaw - path heading| wrapped into [0, pi].
inline double heading_error(const Track& track, Vec2 pos, double yaw) {
  const std::size_t i = track.nearest_index(pos);
  return std::abs(wrap_angle(yaw - segment_heading(track, i)));
}

inline PathProjection project(const Track& track, Vec2 pos,
                              XteMode mode = XteMode::kNearestWaypoint) {
  PathProjection p;
  p.nearest_index = track.nearest_index(pos);
  p.distance = mode == XteMode::kNearestWaypoint
                   ? std::sqrt(squared_distance(pos, track.point(p.nearest_index)))
                   : cross_track_error(track, pos, mode);
  p.path_heading = segment_heading(track, p.nearest_index);
  return p;
}

inline constexpr std::size_t kCurvatureWindow = 10;

// Sum of (1 - cos(turn angle)) over the interior points of a polyline.
// Triples with a zero-length chord are skipped and counted in *degenerate.
inline double curvature_score(std::span<const Vec2> pts,
                              std::size_t* degenerate = nullptr) {
  double total = 0.0;
  std::size_t skipped = 0;
  for (std::size_t i = 1; i + 1 < pts.size(); ++i) {
    const double v1x = pts[i].x - pts[i - 1].x;
    const double v1y = pts[i].y - pts[i - 1].y;
    const double v2x = pts[i + 1].x - pts[i].x;
    const double v2y = pts[i + 1].y - pts[i].y;
    const double n1 = std::hypot(v1x, v1y);
    const double n2 = std::hypot(v2x, v2y);
    if (n1 == 0.0 || n2 == 0.0) {
      ++skipped;
      continue;
    }
    const double c = std::clamp((v1x * v2x + v1y * v2y) / (n1 * n2), -1.0, 1.0);
    total += 1.0 - c;
  }
  if (degenerate != nullptr) *degenerate = skipped;
  return total;
}

// Curvature of the 10 consecutive waypoints starting at the one nearest pos.
// Near the end of an open path the window repeats the last waypoint, and
// those degenerate triples contribute nothing.
inline double local_curvature(const Track& track, Vec2 pos,
                              std::size_t* degenerate = nullptr) {
  std::array<Vec2, kCurvatureWindow> window;
  const std::size_t start = track.nearest_index(pos);
  for (std::size_t k = 0; k < kCurvatureWindow; ++k) {
    window[k] = track.point(track.advance(start, k));
  }
  return curvature_score(window, degenerate);
}

// Fraction of the lap that must be covered before wrapping counts as a lap.
inline constexpr double kLapCoverage = 0.9;

// Monotone progress: backward moves (index behind prev_index by less than
// half a lap) are ignored. An open path is done on reaching its last
// waypoint.
inline LapProgress lap_progress(const Track& track, Vec2 pos,
                                std::size_t prev_index) {
  const std::size_t n = track.size();
  const std::size_t nearest = track.nearest_index(pos);
  if (!track.closed()) {
    if (nearest <= prev_index) return {prev_index, false};
    return {nearest, nearest + 1 == n};
  }
  const std::size_t forward = (nearest + n - prev_index) % n;
  if (forward == 0 || forward > n / 2) return {prev_index, false};
  const bool wrapped = nearest < prev_index;
  const double covered =
      static_cast<double>(prev_index + 1) / static_cast<double>(n);
  return {nearest, wrapped && covered >= kLapCoverage};
}

// Signed lateral offset of pos from the segment leaving waypoint i
// (positive to the left of the direction of travel).
inline double signed_lateral_offset(const Track& track, Vec2 pos,
                                    std::size_t i) {
  const auto [ia, ib] = track.segment_from(i);
  const Vec2 a = track.point(ia);
  const Vec2 b = track.point(ib);
  const double ex = b.x - a.x;
  const double ey = b.y - a.y;
  const double len = std::hypot(ex, ey);
  return (ex * (pos.y - a.y) - ey * (pos.x - a.x)) / len;
}

// True when pos lies beyond the track edge on its side of the path, with the
// edge taken from the nearest waypoint.
inline bool off_track(const Track& track, Vec2 pos, double xte) {
  const std::size_t i = track.nearest_index(pos);
  const Waypoint& w = track[i];
  const double side = signed_lateral_offset(track, pos, i);
  return xte > (side >= 0.0 ? w.half_width_left : w.half_width_right);
}

}  // namespace wsmpc

#endif  // WSMPC_TRACKGEOM_HPP_
