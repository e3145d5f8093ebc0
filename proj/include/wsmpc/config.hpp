#ifndef WSMPC_CONFIG_HPP_
#define WSMPC_CONFIG_HPP_

// JSON configuration for every tunable structure, and the resolved pipeline
// configuration written into run manifests. Missing keys keep their
// defaults; unknown keys are rejected so typos do not pass silently.

#include <cstdint>
#include <fstream>
#include <initializer_list>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "wsmpc/bench.hpp"
#include "wsmpc/errors.hpp"
#include "wsmpc/learn.hpp"
#include "wsmpc/mpc.hpp"
#include "wsmpc/policy.hpp"
#include "wsmpc/tracks.hpp"
#include "wsmpc/vehicle.hpp"

namespace wsmpc {

using Json = nlohmann::json;

namespace detail {

inline void check_keys(const Json& j, const char* what,
                       std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ValidationError(std::string(what) + " must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* k : allowed) known = known || it.key() == k;
    if (!known) {
      throw ValidationError("unknown key '" + it.key() + "' in " + what);
    }
  }
}

template <class T>
void read(const Json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const Json::exception& e) {
    throw ValidationError(std::string("bad value for '") + key + "': " + e.what());
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Vehicle and controller

inline Json to_json(const VehicleSpec& v) {
  return {{"wheelbase", v.wheelbase}, {"dt", v.dt},
          {"accel_min", v.accel_min}, {"accel_max", v.accel_max},
          {"steer_min", v.steer_min}, {"steer_max", v.steer_max}};
}

inline void from_json(const Json& j, VehicleSpec& v) {
  detail::check_keys(j, "vehicle",
                     {"wheelbase", "dt", "accel_min", "accel_max", "steer_min", "steer_max"});
  detail::read(j, "wheelbase", v.wheelbase);
  detail::read(j, "dt", v.dt);
  detail::read(j, "accel_min", v.accel_min);
  detail::read(j, "accel_max", v.accel_max);
  detail::read(j, "steer_min", v.steer_min);
  detail::read(j, "steer_max", v.steer_max);
}

inline Json to_json(const CostWeights& w) {
  return {{"xte", w.xte}, {"heading", w.heading}, {"speed", w.speed},
          {"steer_rate", w.steer_rate}, {"throttle_rate", w.throttle_rate}};
}

inline void from_json(const Json& j, CostWeights& w) {
  detail::check_keys(j, "weights", {"xte", "heading", "speed", "steer_rate", "throttle_rate"});
  detail::read(j, "xte", w.xte);
  detail::read(j, "heading", w.heading);
  detail::read(j, "speed", w.speed);
  detail::read(j, "steer_rate", w.steer_rate);
  detail::read(j, "throttle_rate", w.throttle_rate);
}

inline const char* to_string(XteMode m) {
  return m == XteMode::kNearestWaypoint ? "nearest_waypoint" : "segment";
}

inline XteMode xte_mode_from_string(const std::string& s) {
  if (s == "nearest_waypoint") return XteMode::kNearestWaypoint;
  if (s == "segment") return XteMode::kSegment;
  throw ValidationError("unknown xte mode '" + s + "'");
}

inline Json to_json(const MpcConfig& c) {
  Json j = {{"horizon", c.horizon},
            {"weights", to_json(c.weights)},
            {"v_ref", c.v_ref},
            {"max_iterations", c.max_iterations},
            {"vehicle", to_json(c.vehicle)},
            {"xte_mode", to_string(c.xte_mode)},
            {"rho_begin", c.rho_begin},
            {"rho_end", c.rho_end}};
  j["early_stop_threshold"] =
      c.early_stop_threshold ? Json(*c.early_stop_threshold) : Json(nullptr);
  return j;
}

inline void from_json(const Json& j, MpcConfig& c) {
  detail::check_keys(j, "controller",
                     {"horizon", "weights", "v_ref", "max_iterations", "early_stop_threshold",
                      "vehicle", "xte_mode", "rho_begin", "rho_end"});
  detail::read(j, "horizon", c.horizon);
  if (j.contains("weights")) from_json(j.at("weights"), c.weights);
  detail::read(j, "v_ref", c.v_ref);
  detail::read(j, "max_iterations", c.max_iterations);
  if (j.contains("early_stop_threshold")) {
    const Json& t = j.at("early_stop_threshold");
    if (t.is_null()) {
      c.early_stop_threshold = std::nullopt;
    } else {
      detail::read(j, "early_stop_threshold", c.early_stop_threshold.emplace());
    }
  }
  if (j.contains("vehicle")) from_json(j.at("vehicle"), c.vehicle);
  if (j.contains("xte_mode")) {
    std::string m;
    detail::read(j, "xte_mode", m);
    c.xte_mode = xte_mode_from_string(m);
  }
  detail::read(j, "rho_begin", c.rho_begin);
  detail::read(j, "rho_end", c.rho_end);
}

inline Json to_json(const ObservationConfig& o) {
  return {{"lookahead_count", o.lookahead_count}, {"lookahead_stride", o.lookahead_stride}};
}

inline void from_json(const Json& j, ObservationConfig& o) {
  detail::check_keys(j, "observation", {"lookahead_count", "lookahead_stride"});
  detail::read(j, "lookahead_count", o.lookahead_count);
  detail::read(j, "lookahead_stride", o.lookahead_stride);
}

inline Json to_json(const StartPerturbation& p) {
  return {{"lateral", p.lateral}, {"yaw", p.yaw}};
}

inline void from_json(const Json& j, StartPerturbation& p) {
  detail::check_keys(j, "perturbation", {"lateral", "yaw"});
  detail::read(j, "lateral", p.lateral);
  detail::read(j, "yaw", p.yaw);
}

// ---------------------------------------------------------------------------
// Learning

inline Json to_json(const DemoConfig& d) {
  return {{"count", d.count},
          {"expert", to_json(d.expert)},
          {"warm_start", to_string(d.warm_start)},
          {"max_episode_steps", d.max_episode_steps},
          {"accel_noise", d.accel_noise},
          {"steer_noise", d.steer_noise},
          {"start_perturbation", to_json(d.start_perturbation)},
          {"seed", d.seed}};
}

inline void from_json(const Json& j, DemoConfig& d) {
  detail::check_keys(j, "demos",
                     {"count", "expert", "warm_start", "max_episode_steps", "accel_noise",
                      "steer_noise", "start_perturbation", "seed"});
  detail::read(j, "count", d.count);
  if (j.contains("expert")) from_json(j.at("expert"), d.expert);
  if (j.contains("warm_start")) {
    std::string w;
    detail::read(j, "warm_start", w);
    d.warm_start = warm_start_from_string(w);
  }
  detail::read(j, "max_episode_steps", d.max_episode_steps);
  detail::read(j, "accel_noise", d.accel_noise);
  detail::read(j, "steer_noise", d.steer_noise);
  if (j.contains("start_perturbation")) {
    from_json(j.at("start_perturbation"), d.start_perturbation);
  }
  detail::read(j, "seed", d.seed);
}

inline Json to_json(const BcConfig& b) {
  return {{"epochs", b.epochs},
          {"batch_size", b.batch_size},
          {"learning_rate", b.learning_rate},
          {"validation_fraction", b.validation_fraction},
          {"seed", b.seed},
          {"fit_input_standardization", b.fit_input_standardization}};
}

inline void from_json(const Json& j, BcConfig& b) {
  detail::check_keys(j, "bc",
                     {"epochs", "batch_size", "learning_rate", "validation_fraction", "seed",
                      "fit_input_standardization"});
  detail::read(j, "epochs", b.epochs);
  detail::read(j, "batch_size", b.batch_size);
  detail::read(j, "learning_rate", b.learning_rate);
  detail::read(j, "validation_fraction", b.validation_fraction);
  detail::read(j, "seed", b.seed);
  detail::read(j, "fit_input_standardization", b.fit_input_standardization);
}

inline Json to_json(const FinetuneConfig& f) {
  return {{"lambda", f.weights.lambda},
          {"lambda1", f.weights.policy},
          {"lambda2", f.weights.entropy},
          {"lambda3", f.weights.value},
          {"gamma", f.gamma},
          {"gae_lambda", f.gae_lambda},
          {"clip", f.clip},
          {"epochs", f.epochs},
          {"minibatch_size", f.minibatch_size},
          {"steps_per_batch", f.steps_per_batch},
          {"learning_rate", f.learning_rate},
          {"value_learning_rate", f.value_learning_rate},
          {"time_mode", to_string(f.time_mode)},
          {"t_iter_nominal", f.t_iter_nominal},
          {"max_episode_steps", f.max_episode_steps},
          {"divergence_factor", f.divergence_factor},
          {"divergence_patience", f.divergence_patience}};
}

inline void from_json(const Json& j, FinetuneConfig& f) {
  detail::check_keys(j, "finetune",
                     {"lambda", "lambda1", "lambda2", "lambda3", "gamma", "gae_lambda", "clip",
                      "epochs", "minibatch_size", "steps_per_batch", "learning_rate",
                      "value_learning_rate", "time_mode", "t_iter_nominal",
                      "max_episode_steps", "divergence_factor", "divergence_patience"});
  detail::read(j, "lambda", f.weights.lambda);
  detail::read(j, "lambda1", f.weights.policy);
  detail::read(j, "lambda2", f.weights.entropy);
  detail::read(j, "lambda3", f.weights.value);
  detail::read(j, "gamma", f.gamma);
  detail::read(j, "gae_lambda", f.gae_lambda);
  detail::read(j, "clip", f.clip);
  detail::read(j, "epochs", f.epochs);
  detail::read(j, "minibatch_size", f.minibatch_size);
  detail::read(j, "steps_per_batch", f.steps_per_batch);
  detail::read(j, "learning_rate", f.learning_rate);
  detail::read(j, "value_learning_rate", f.value_learning_rate);
  if (j.contains("time_mode")) {
    std::string m;
    detail::read(j, "time_mode", m);
    f.time_mode = time_mode_from_string(m);
  }
  detail::read(j, "t_iter_nominal", f.t_iter_nominal);
  detail::read(j, "max_episode_steps", f.max_episode_steps);
  detail::read(j, "divergence_factor", f.divergence_factor);
  detail::read(j, "divergence_patience", f.divergence_patience);
}

inline Json to_json(const EpisodeConfig& e) {
  return {{"max_steps", e.max_steps}, {"perturbation", to_json(e.perturbation)}};
}

inline void from_json(const Json& j, EpisodeConfig& e) {
  detail::check_keys(j, "episode", {"max_steps", "perturbation"});
  detail::read(j, "max_steps", e.max_steps);
  if (j.contains("perturbation")) from_json(j.at("perturbation"), e.perturbation);
}

// ---------------------------------------------------------------------------
// Pipeline

// Track references are synthetic track names or paths to waypoint CSV files.
struct TrackSets {
  std::vector<std::string> training{"hairpin", "circle", "chicane"};
  std::vector<std::string> holdout_complex{"s_curve"};
  std::vector<std::string> holdout_simple{"straight"};

  const std::vector<std::string>& get(const std::string& set) const {
    if (set == "training") return training;
    if (set == "holdout-complex") return holdout_complex;
    if (set == "holdout-simple") return holdout_simple;
    throw ValidationError("unknown track set '" + set +
                          "' (expected training, holdout-complex or holdout-simple)");
  }
};

inline DemoConfig pipeline_demo_defaults() {
  DemoConfig d;
  d.count = 6000;
  d.steer_noise = 0.03;
  d.accel_noise = 0.5;
  d.start_perturbation = {0.05, 0.03};
  return d;
}

inline FinetuneConfig pipeline_finetune_defaults() {
  FinetuneConfig f;
  f.learning_rate = 3e-5;
  return f;
}

struct PipelineConfig {
  std::uint64_t seed = 0;
  TrackStyle track_style;
  double track_scale = 1.0;  // applied to tracks loaded from files
  TrackSets tracks;
  ObservationConfig observation;
  std::size_t hidden_units = 64;
  double initial_log_std = -4.0;
  DemoConfig demos = pipeline_demo_defaults();
  BcConfig bc;
  MpcConfig realtime = realtime_config();
  FinetuneConfig finetune = pipeline_finetune_defaults();
  std::size_t finetune_steps = 10240;
  EpisodeConfig episode;
  std::vector<std::uint64_t> eval_seeds{0, 1, 2};

  // Spreads the base seed over the stages so each draws an independent
  // stream.
  void derive_seeds() {
    demos.seed = seed * 1000 + 1;
    bc.seed = seed * 1000 + 2;
  }
  std::uint64_t policy_init_seed() const { return seed * 1000 + 3; }
  std::uint64_t value_init_seed() const { return seed * 1000 + 4; }
  std::uint64_t finetune_seed() const { return seed * 1000 + 5; }

  // Copies the shared observation layout into the stages that use it.
  void propagate() {
    finetune.observation = observation;
    episode.observation = observation;
  }

  void validate() const {
    observation.validate();
    demos.expert.validate();
    realtime.validate();
    finetune.validate();
    if (demos.count < 1) throw ValidationError("demos.count must be >= 1");
    if (eval_seeds.empty()) throw ValidationError("eval_seeds must not be empty");
    if (tracks.training.empty()) throw ValidationError("no training tracks configured");
    if (!(initial_log_std >= kLogStdMin && initial_log_std <= kLogStdMax)) {
      throw ValidationError("initial_log_std outside [-5, 2]");
    }
    if (!(track_scale > 0.0)) throw ValidationError("track_scale must be positive");
  }
};

inline Json to_json(const PipelineConfig& c) {
  return {{"seed", c.seed},
          {"track_style", {{"spacing", c.track_style.spacing},
                           {"half_width", c.track_style.half_width}}},
          {"track_scale", c.track_scale},
          {"tracks", {{"training", c.tracks.training},
                      {"holdout_complex", c.tracks.holdout_complex},
                      {"holdout_simple", c.tracks.holdout_simple}}},
          {"observation", to_json(c.observation)},
          {"hidden_units", c.hidden_units},
          {"initial_log_std", c.initial_log_std},
          {"demos", to_json(c.demos)},
          {"bc", to_json(c.bc)},
          {"realtime", to_json(c.realtime)},
          {"finetune", to_json(c.finetune)},
          {"finetune_steps", c.finetune_steps},
          {"episode", to_json(c.episode)},
          {"eval_seeds", c.eval_seeds}};
}

// Reads a (possibly partial) document over the defaults. Stage seeds are
// derived from "seed" unless the document sets them explicitly.
inline PipelineConfig pipeline_config_from_json(const Json& j) {
  PipelineConfig c;
  detail::check_keys(j, "config",
                     {"seed", "track_style", "track_scale", "tracks", "observation",
                      "hidden_units", "initial_log_std", "demos", "bc", "realtime",
                      "finetune", "finetune_steps", "episode", "eval_seeds"});
  detail::read(j, "seed", c.seed);
  c.derive_seeds();
  if (j.contains("track_style")) {
    const Json& s = j.at("track_style");
    detail::check_keys(s, "track_style", {"spacing", "half_width"});
    detail::read(s, "spacing", c.track_style.spacing);
    detail::read(s, "half_width", c.track_style.half_width);
  }
  detail::read(j, "track_scale", c.track_scale);
  if (j.contains("tracks")) {
    const Json& t = j.at("tracks");
    detail::check_keys(t, "tracks", {"training", "holdout_complex", "holdout_simple"});
    detail::read(t, "training", c.tracks.training);
    detail::read(t, "holdout_complex", c.tracks.holdout_complex);
    detail::read(t, "holdout_simple", c.tracks.holdout_simple);
  }
  if (j.contains("observation")) from_json(j.at("observation"), c.observation);
  detail::read(j, "hidden_units", c.hidden_units);
  detail::read(j, "initial_log_std", c.initial_log_std);
  if (j.contains("demos")) from_json(j.at("demos"), c.demos);
  if (j.contains("bc")) from_json(j.at("bc"), c.bc);
  if (j.contains("realtime")) from_json(j.at("realtime"), c.realtime);
  if (j.contains("finetune")) from_json(j.at("finetune"), c.finetune);
  detail::read(j, "finetune_steps", c.finetune_steps);
  if (j.contains("episode")) from_json(j.at("episode"), c.episode);
  detail::read(j, "eval_seeds", c.eval_seeds);
  c.propagate();
  c.validate();
  return c;
}

inline PipelineConfig load_pipeline_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config file '" + path + "'");
  Json j;
  try {
    j = Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ParseError("config '" + path + "': " + e.what());
  }
  return pipeline_config_from_json(j);
}

inline PipelineConfig default_pipeline_config(std::uint64_t seed = 0) {
  PipelineConfig c;
  c.seed = seed;
  c.derive_seeds();
  c.propagate();
  return c;
}

// Synthetic name, or a waypoint CSV path (scaled by `scale`).
inline Track resolve_track(const std::string& ref, const TrackStyle& style, double scale) {
  for (const std::string& name : synthetic_track_names()) {
    if (ref == name) return make_synthetic_track(ref, style);
  }
  std::ifstream in(ref);
  if (!in) {
    throw ValidationError("track '" + ref +
                          "' is neither a synthetic track name nor a readable file");
  }
  return load_track(in, scale);
}

inline std::vector<NamedTrack> resolve_tracks(const std::vector<std::string>& refs,
                                              const PipelineConfig& c) {
  std::vector<NamedTrack> out;
  for (const std::string& r : refs) {
    out.push_back({r, resolve_track(r, c.track_style, c.track_scale)});
  }
  return out;
}

}  // namespace wsmpc

#endif  // WSMPC_CONFIG_HPP_
