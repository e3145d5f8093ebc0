#ifndef WSMPC_BENCH_HPP_
#define WSMPC_BENCH_HPP_

// Closed-loop evaluation: one episode per (track, warm-start variant, seed),
// aggregated into comparison tables.

#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "wsmpc/action_codec.hpp"
#include "wsmpc/episode.hpp"
#include "wsmpc/errors.hpp"
#include "wsmpc/mpc.hpp"
#include "wsmpc/policy.hpp"
#include "wsmpc/trackgeom.hpp"
#include "wsmpc/vehicle.hpp"

namespace wsmpc {

struct EpisodeConfig {
  std::size_t max_steps = 5000;
  StartPerturbation perturbation{0.02, 0.01};
  ObservationConfig observation;
};

struct StepRecord {
  std::size_t step = 0;
  VehicleState state;  // before the input is applied
  ControlInput applied;
  int iterations = 0;
  bool early_stopped = false;
  double solve_time = 0.0;
  double planned_xte_sum = 0.0;
  double xte = 0.0;  // after the input is applied
  double curvature = 0.0;
};

struct EpisodeMetrics {
  bool completed_lap = false;
  std::size_t steps = 0;
  double mean_iterations = 0.0;
  double mean_solve_time = 0.0;
  double mean_xte = 0.0;
  double max_xte = 0.0;
  std::optional<std::size_t> off_track_step;
  double early_stop_fraction = 0.0;
};

struct EpisodeResult {
  EpisodeMetrics metrics;
  std::vector<StepRecord> trace;
  EpisodeEnd end = EpisodeEnd::kRunning;
};

// Means over the executed steps of a trace, in trace order.
inline EpisodeMetrics summarize(const std::vector<StepRecord>& trace) {
  EpisodeMetrics m;
  m.steps = trace.size();
  if (trace.empty()) return m;
  double it = 0.0, t = 0.0, x = 0.0, es = 0.0;
  for (const StepRecord& r : trace) {
    it += r.iterations;
    t += r.solve_time;
    x += r.xte;
    es += r.early_stopped ? 1.0 : 0.0;
    m.max_xte = std::max(m.max_xte, r.xte);
  }
  const double n = static_cast<double>(trace.size());
  m.mean_iterations = it / n;
  m.mean_solve_time = t / n;
  m.mean_xte = x / n;
  m.early_stop_fraction = es / n;
  return m;
}

inline EpisodeResult run_episode(const Track& track, const MpcConfig& config,
                                 WarmStartSource warm_start, const MlpParams* policy,
                                 std::uint64_t seed, const EpisodeConfig& ep = {}) {
  config.validate();
  if (warm_start == WarmStartSource::kPolicy && policy == nullptr) {
    throw ValidationError("policy warm start needs a policy");
  }
  EpisodeResult result;
  VehicleState s = start_state(track, config.v_ref, ep.perturbation, seed);
  EpisodeTracker tracker(track, s, ep.max_steps);
  std::optional<MpcSolution> previous;
  ControlInput applied{};
  while (true) {
    ControlSequence guess;
    WarmStartSource ws = warm_start;
    if (ws == WarmStartSource::kPolicy) {
      guess = decode_action(forward(*policy, observe(track, s, ep.observation)),
                            config.vehicle);
    } else if (ws == WarmStartSource::kPreviousShifted && !previous) {
      ws = WarmStartSource::kZeros;
    }
    const auto t0 = std::chrono::steady_clock::now();
    MpcSolution sol = solve(track, s, config, ws, &guess,
                            previous ? &*previous : nullptr, applied);
    const double elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    StepRecord rec;
    rec.step = result.trace.size();
    rec.state = s;
    rec.curvature = local_curvature(track, s.position());
    applied = sol.sequence.front();
    rec.applied = applied;
    rec.iterations = sol.iterations_used;
    rec.early_stopped = sol.early_stopped;
    rec.solve_time = elapsed;
    rec.planned_xte_sum = sol.planned_xte_sum;
    s = step(s, applied, config.vehicle);
    previous = std::move(sol);
    const auto status = tracker.advance(s);
    rec.xte = status.xte;
    result.trace.push_back(rec);
    if (status.end != EpisodeEnd::kRunning) {
      result.end = status.end;
      break;
    }
  }
  result.metrics = summarize(result.trace);
  result.metrics.completed_lap = result.end == EpisodeEnd::kLapCompleted;
  if (result.end == EpisodeEnd::kOffTrack) {
    result.metrics.off_track_step = result.trace.size() - 1;
  }
  return result;
}

inline void write_trace(std::ostream& out, const std::vector<StepRecord>& trace) {
  out << "step,x,y,yaw,v,accel,steer,iterations,early_stopped,planned_xte_sum,xte,"
         "curvature\n";
  out.precision(17);
  for (const StepRecord& r : trace) {
    out << r.step << ',' << r.state.x << ',' << r.state.y << ',' << r.state.yaw << ','
        << r.state.v << ',' << r.applied.accel << ',' << r.applied.steer << ','
        << r.iterations << ',' << (r.early_stopped ? 1 : 0) << ','
        << r.planned_xte_sum << ',' << r.xte << ',' << r.curvature << '\n';
  }
}

// ---------------------------------------------------------------------------
// Curvature scatter

struct CurvatureRecord {
  double curvature = 0.0;
  double xte = 0.0;
};

inline std::vector<CurvatureRecord> curvature_vs_xte(const Track& track,
                                                     const MpcConfig& config,
                                                     WarmStartSource warm_start,
                                                     const MlpParams* policy,
                                                     std::uint64_t seed = 0,
                                                     const EpisodeConfig& ep = {}) {
  const EpisodeResult r = run_episode(track, config, warm_start, policy, seed, ep);
  std::vector<CurvatureRecord> out;
  out.reserve(r.trace.size());
  for (const StepRecord& s : r.trace) out.push_back({s.curvature, s.xte});
  return out;
}

inline void write_curvature_records(std::ostream& out,
                                    const std::vector<CurvatureRecord>& records) {
  out << "curvature,xte\n";
  out.precision(17);
  for (const CurvatureRecord& r : records) out << r.curvature << ',' << r.xte << '\n';
}

// ---------------------------------------------------------------------------
// Experiments

struct NamedTrack {
  std::string name;
  Track track;
};

struct Variant {
  std::string name;  // e.g. zeros, bc, finetuned
  WarmStartSource warm_start = WarmStartSource::kZeros;
  std::optional<MlpParams> policy;  // required for kPolicy
};

struct ExperimentPlan {
  std::string track_set = "training";  // training | holdout-complex | holdout-simple
  std::vector<NamedTrack> tracks;
  std::vector<Variant> variants;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  MpcConfig controller = realtime_config();
  EpisodeConfig episode;

  void validate() const {
    if (tracks.empty()) throw ValidationError("experiment plan has no tracks");
    if (variants.empty()) throw ValidationError("experiment plan has no variants");
    if (seeds.empty()) throw ValidationError("experiment plan has no seeds");
    for (const Variant& v : variants) {
      if (v.warm_start == WarmStartSource::kPolicy && !v.policy) {
        throw ValidationError("variant '" + v.name + "' needs a policy checkpoint");
      }
    }
    controller.validate();
  }
};

struct Stat {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation over seeds
};

inline Stat stat_of(const std::vector<double>& xs) {
  Stat s;
  if (xs.empty()) return s;
  for (double x : xs) s.mean += x;
  s.mean /= static_cast<double>(xs.size());
  for (double x : xs) s.std += (x - s.mean) * (x - s.mean);
  s.std = std::sqrt(s.std / static_cast<double>(xs.size()));
  return s;
}

struct ReportRow {
  std::string track;
  std::string variant;
  std::size_t seeds = 0;
  Stat mean_iterations;
  Stat mean_xte;
  Stat max_xte;
  Stat steps;
  Stat mean_solve_time;
  std::size_t completed_laps = 0;
  std::size_t off_track = 0;
  std::vector<EpisodeMetrics> episodes;  // per seed, in plan order
};

struct Improvement {
  std::string track;
  double iterations = 0.0;  // (bc - finetuned) / bc
  double xte = 0.0;
};

struct Report {
  std::string track_set;
  std::vector<ReportRow> rows;
  std::vector<Improvement> improvements;

  const ReportRow* find(const std::string& track, const std::string& variant) const {
    for (const ReportRow& r : rows) {
      if (r.track == track && r.variant == variant) return &r;
    }
    return nullptr;
  }
};

inline constexpr const char* kBcVariant = "bc";
inline constexpr const char* kFinetunedVariant = "finetuned";

inline Report compare(const ExperimentPlan& plan) {
  plan.validate();
  Report report;
  report.track_set = plan.track_set;
  for (const NamedTrack& t : plan.tracks) {
    for (const Variant& v : plan.variants) {
      ReportRow row;
      row.track = t.name;
      row.variant = v.name;
      row.seeds = plan.seeds.size();
      std::vector<double> it, xte, mx, steps, time;
      for (std::uint64_t seed : plan.seeds) {
        const EpisodeResult r =
            run_episode(t.track, plan.controller, v.warm_start,
                        v.policy ? &*v.policy : nullptr, seed, plan.episode);
        it.push_back(r.metrics.mean_iterations);
        xte.push_back(r.metrics.mean_xte);
        mx.push_back(r.metrics.max_xte);
        steps.push_back(static_cast<double>(r.metrics.steps));
        time.push_back(r.metrics.mean_solve_time);
        if (r.metrics.completed_lap) ++row.completed_laps;
        if (r.metrics.off_track_step) ++row.off_track;
        row.episodes.push_back(r.metrics);
      }
      row.mean_iterations = stat_of(it);
      row.mean_xte = stat_of(xte);
      row.max_xte = stat_of(mx);
      row.steps = stat_of(steps);
      row.mean_solve_time = stat_of(time);
      report.rows.push_back(std::move(row));
    }
    const ReportRow* bc = report.find(t.name, kBcVariant);
    const ReportRow* ft = report.find(t.name, kFinetunedVariant);
    if (bc != nullptr && ft != nullptr) {
      Improvement imp;
      imp.track = t.name;
      imp.iterations = (bc->mean_iterations.mean - ft->mean_iterations.mean) /
                       bc->mean_iterations.mean;
      imp.xte = (bc->mean_xte.mean - ft->mean_xte.mean) / bc->mean_xte.mean;
      report.improvements.push_back(imp);
    }
  }
  return report;
}

// Deterministic columns only; wall-clock timing goes to write_timing_csv.
inline void write_report_csv(std::ostream& out, const Report& r) {
  out << "track_set,track,variant,seeds,mean_iterations,mean_iterations_std,mean_xte,"
         "mean_xte_std,max_xte,steps,completed_laps,off_track\n";
  out.precision(17);
  for (const ReportRow& row : r.rows) {
    out << r.track_set << ',' << row.track << ',' << row.variant << ',' << row.seeds
        << ',' << row.mean_iterations.mean << ',' << row.mean_iterations.std << ','
        << row.mean_xte.mean << ',' << row.mean_xte.std << ',' << row.max_xte.mean
        << ',' << row.steps.mean << ',' << row.completed_laps << ',' << row.off_track
        << '\n';
  }
}

inline void write_timing_csv(std::ostream& out, const Report& r) {
  out << "track,variant,mean_solve_time,mean_solve_time_std\n";
  out.precision(9);
  for (const ReportRow& row : r.rows) {
    out << row.track << ',' << row.variant << ',' << row.mean_solve_time.mean << ','
        << row.mean_solve_time.std << '\n';
  }
}

inline void write_improvements_csv(std::ostream& out, const Report& r) {
  out << "track,iterations_improvement,xte_improvement\n";
  out.precision(17);
  for (const Improvement& i : r.improvements) {
    out << i.track << ',' << i.iterations << ',' << i.xte << '\n';
  }
}

// Solve times are wall clock; leave them out of anything that must reproduce.
inline std::string summary_text(const Report& r, bool with_timing = false) {
  std::ostringstream out;
  out << "Track set: " << r.track_set << "\n\n";
  char line[256];
  std::snprintf(line, sizeof line, "%-12s %-18s %16s %20s %6s %6s", "track", "variant",
                "iterations/step", "mean xte [m]", "laps", "off");
  out << line;
  if (with_timing) {
    std::snprintf(line, sizeof line, " %12s", "solve [ms]");
    out << line;
  }
  out << '\n';
  for (const ReportRow& row : r.rows) {
    std::snprintf(line, sizeof line, "%-12s %-18s %8.2f +- %5.2f %10.4f +- %7.4f %3zu/%-2zu %6zu",
                  row.track.c_str(), row.variant.c_str(), row.mean_iterations.mean,
                  row.mean_iterations.std, row.mean_xte.mean, row.mean_xte.std,
                  row.completed_laps, row.seeds, row.off_track);
    out << line;
    if (with_timing) {
      std::snprintf(line, sizeof line, " %12.3f", 1e3 * row.mean_solve_time.mean);
      out << line;
    }
    out << '\n';
  }
  if (!r.improvements.empty()) {
    out << "\nFine-tuned relative to behavior cloning (positive is better):\n";
    for (const Improvement& i : r.improvements) {
      std::snprintf(line, sizeof line, "  %-12s iterations %+7.2f%%   xte %+7.2f%%\n",
                    i.track.c_str(), 100.0 * i.iterations, 100.0 * i.xte);
      out << line;
    }
  }
  return out.str();
}

}  // namespace wsmpc

#endif  // WSMPC_BENCH_HPP_
