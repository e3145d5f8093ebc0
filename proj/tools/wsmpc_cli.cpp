// wsmpc: command-line driver for the warm-started MPC pipeline.

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "wsmpc/bench.hpp"
#include "wsmpc/config.hpp"
#include "wsmpc/errors.hpp"
#include "wsmpc/learn.hpp"
#include "wsmpc/pipeline.hpp"
#include "wsmpc/policy.hpp"
#include "wsmpc/tracks.hpp"

namespace fs = std::filesystem;
using namespace wsmpc;

namespace {

// Errors that should come with usage text: bad arguments, missing files.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir = "wsmpc-out";
};

PipelineConfig resolve_config(const Globals& g) {
  Json j = Json::object();
  if (!g.config_path.empty()) {
    std::ifstream in(g.config_path);
    if (!in) throw UsageError("cannot open config file '" + g.config_path + "'");
    try {
      j = Json::parse(in);
    } catch (const Json::parse_error& e) {
      throw ParseError("config '" + g.config_path + "': " + e.what());
    }
  }
  // --seed wins over the file and re-derives every stage seed.
  if (g.seed) {
    j["seed"] = *g.seed;
    if (j.contains("demos") && j["demos"].is_object()) j["demos"].erase("seed");
    if (j.contains("bc") && j["bc"].is_object()) j["bc"].erase("seed");
  }
  return pipeline_config_from_json(j);
}

fs::path out_path(const Globals& g, const std::string& name) {
  return fs::path(g.out_dir) / name;
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream out(p);
  if (!out) throw IoError("cannot write '" + p.string() + "'");
  out.precision(17);
  return out;
}

std::ifstream open_in(const std::string& path, const char* what) {
  std::ifstream in(path);
  if (!in) throw UsageError(std::string("cannot open ") + what + " '" + path + "'");
  return in;
}

MlpParams read_policy(const std::string& path) {
  std::ifstream in = open_in(path, "policy checkpoint");
  return load_mlp(in);
}

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

class Manifest {
 public:
  Manifest(std::string command, int argc, char** argv) : command_(std::move(command)) {
    doc_["tool"] = "wsmpc";
    doc_["version"] = "0.1.0";
    doc_["command"] = command_;
    doc_["argv"] = std::vector<std::string>(argv, argv + argc);
    doc_["started"] = utc_now();
    doc_["outputs"] = Json::array();
  }

  void set_config(const PipelineConfig& c) {
    doc_["seed"] = c.seed;
    doc_["config"] = to_json(c);
  }
  void output(const fs::path& p) { doc_["outputs"].push_back(p.string()); }
  Json& extra() { return doc_["results"]; }

  void write(const Globals& g) {
    doc_["finished"] = utc_now();
    const fs::path p = out_path(g, "manifest-" + command_ + ".json");
    std::ofstream out = open_out(p);
    out << doc_.dump(2) << '\n';
  }

 private:
  std::string command_;
  Json doc_;
};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

// ---------------------------------------------------------------------------

void cmd_gen_tracks(const Globals& g, Manifest& m, const std::string& names, bool quiet) {
  const PipelineConfig cfg = resolve_config(g);
  m.set_config(cfg);
  for (const std::string& name : split_list(names)) {
    const Track t = make_synthetic_track(name, cfg.track_style);
    const fs::path p = out_path(g, name + ".csv");
    std::ofstream out = open_out(p);
    save_track(out, t);
    m.output(p);
    if (!quiet) {
      std::printf("%-9s %7zu waypoints  %7.2f m\n", name.c_str(), t.size(),
                  t.total_length());
    }
  }
}

void cmd_collect(const Globals& g, Manifest& m, std::optional<std::size_t> n, bool quiet) {
  PipelineConfig cfg = resolve_config(g);
  if (n) cfg.demos.count = *n;
  m.set_config(cfg);
  DemoStats st;
  const std::vector<Demonstration> demos = run_collect(cfg, &st);
  const fs::path p = out_path(g, "demos.json");
  std::ofstream out = open_out(p);
  save_demos(out, demos);
  m.output(p);
  const double below = st.attempted_steps == 0
                           ? 0.0
                           : static_cast<double>(st.below_early_stop) /
                                 static_cast<double>(st.attempted_steps);
  m.extra() = {{"demonstrations", demos.size()},
               {"episodes", st.episodes},
               {"laps_completed", st.laps_completed},
               {"off_track_steps", st.off_track_steps},
               {"expert_below_threshold_fraction", below}};
  if (!quiet) {
    std::printf("%zu demonstrations from %zu episodes (%zu laps, %zu off-track steps)\n",
                demos.size(), st.episodes, st.laps_completed, st.off_track_steps);
    std::printf("expert planned xte under 0.1 m on %.1f%% of steps\n", 100.0 * below);
  }
}

void cmd_train_bc(const Globals& g, Manifest& m, const std::string& demos_path,
                  std::optional<std::size_t> epochs, bool quiet) {
  PipelineConfig cfg = resolve_config(g);
  if (epochs) cfg.bc.epochs = *epochs;
  m.set_config(cfg);
  std::ifstream in = open_in(demos_path, "demonstrations");
  const std::vector<Demonstration> demos = load_demos(in);
  const BcResult r = run_train_bc(cfg, demos, [&](const BcEpoch& e) {
    if (!quiet && (e.epoch % 20 == 0 || e.epoch == cfg.bc.epochs)) {
      std::printf("epoch %4zu  train %.6f  val %.6f\n", e.epoch, e.train_loss,
                  e.validation_loss);
    }
  });
  const fs::path pp = out_path(g, "policy_bc.json");
  {
    std::ofstream out = open_out(pp);
    save_mlp(out, r.params);
  }
  const fs::path hp = out_path(g, "bc_history.csv");
  {
    std::ofstream out = open_out(hp);
    out << "epoch,train_loss,validation_loss\n";
    for (const BcEpoch& e : r.history) {
      out << e.epoch << ',' << e.train_loss << ',' << e.validation_loss << '\n';
    }
  }
  m.output(pp);
  m.output(hp);
  if (!r.history.empty()) {
    m.extra() = {{"final_train_loss", r.history.back().train_loss},
                 {"final_validation_loss", r.history.back().validation_loss}};
  }
}

void cmd_finetune(const Globals& g, Manifest& m, const std::string& policy_path,
                  std::optional<std::size_t> steps, std::optional<double> lambda,
                  const std::string& time_mode, bool quiet) {
  PipelineConfig cfg = resolve_config(g);
  if (steps) cfg.finetune_steps = *steps;
  if (lambda) cfg.finetune.weights.lambda = *lambda;
  if (!time_mode.empty()) cfg.finetune.time_mode = time_mode_from_string(time_mode);
  cfg.validate();
  m.set_config(cfg);
  const MlpParams bc = read_policy(policy_path);
  const FinetuneResult r = run_finetune(cfg, bc, [&](const FinetuneLogRow& row) {
    if (!quiet) {
      std::printf("batch %3zu  reward %9.4f  iters %6.2f  xte %.4f  imitation %.5f  lr %.2g\n",
                  row.batch, row.mean_reward, row.mean_iterations, row.mean_xte,
                  row.l_imitation, row.learning_rate);
      std::fflush(stdout);
    }
  });
  const fs::path pp = out_path(g, "policy_finetuned.json");
  const fs::path vp = out_path(g, "value.json");
  const fs::path lp = out_path(g, "finetune_log.csv");
  {
    std::ofstream out = open_out(pp);
    save_mlp(out, r.policy);
  }
  {
    std::ofstream out = open_out(vp);
    save_mlp(out, r.value_net);
  }
  {
    std::ofstream out = open_out(lp);
    write_finetune_log(out, r.log);
  }
  m.output(pp);
  m.output(vp);
  m.output(lp);
  m.extra() = {{"batches", r.log.size()},
               {"episodes", r.episodes},
               {"off_track_episodes", r.off_track_episodes}};
}

void write_report(const Globals& g, Manifest& m, const Report& r, bool quiet) {
  const fs::path rp = out_path(g, "report.csv");
  const fs::path tp = out_path(g, "timing.csv");
  const fs::path sp = out_path(g, "summary.txt");
  {
    std::ofstream out = open_out(rp);
    write_report_csv(out, r);
  }
  {
    std::ofstream out = open_out(tp);
    write_timing_csv(out, r);
  }
  {
    std::ofstream out = open_out(sp);
    out << summary_text(r);
  }
  m.output(rp);
  m.output(tp);
  m.output(sp);
  if (!r.improvements.empty()) {
    const fs::path ip = out_path(g, "improvements.csv");
    std::ofstream out = open_out(ip);
    write_improvements_csv(out, r);
    m.output(ip);
  }
  if (!quiet) std::cout << summary_text(r, true);
}

std::optional<MlpParams> maybe_policy(const std::string& path) {
  if (path.empty()) return std::nullopt;
  return read_policy(path);
}

void cmd_evaluate(const Globals& g, Manifest& m, const std::string& track_set,
                  const std::string& variants, const std::string& bc_path,
                  const std::string& ft_path, bool quiet) {
  const PipelineConfig cfg = resolve_config(g);
  m.set_config(cfg);
  const ExperimentPlan plan = make_plan(cfg, track_set, split_list(variants),
                                        maybe_policy(bc_path), maybe_policy(ft_path));
  write_report(g, m, compare(plan), quiet);
}

void cmd_analyze(const Globals& g, Manifest& m, const std::string& track_ref,
                 const std::string& variant, const std::string& policy_path,
                 std::uint64_t episode_seed, bool quiet) {
  const PipelineConfig cfg = resolve_config(g);
  m.set_config(cfg);
  std::optional<MlpParams> policy = maybe_policy(policy_path);
  PipelineConfig one = cfg;
  one.tracks.training = {track_ref};
  const ExperimentPlan plan =
      make_plan(one, "training", {variant}, policy, policy);
  const Variant& v = plan.variants.front();
  const Track& track = plan.tracks.front().track;
  EpisodeConfig ep = cfg.episode;
  ep.observation = cfg.observation;
  const EpisodeResult res = run_episode(track, cfg.realtime, v.warm_start,
                                        v.policy ? &*v.policy : nullptr, episode_seed, ep);
  const fs::path tp = out_path(g, "trace.csv");
  const fs::path cp = out_path(g, "curvature_xte.csv");
  {
    std::ofstream out = open_out(tp);
    write_trace(out, res.trace);
  }
  {
    std::ofstream out = open_out(cp);
    std::vector<CurvatureRecord> records;
    for (const StepRecord& s : res.trace) records.push_back({s.curvature, s.xte});
    write_curvature_records(out, records);
  }
  m.output(tp);
  m.output(cp);
  m.extra() = {{"end", to_string(res.end)},
               {"steps", res.metrics.steps},
               {"mean_iterations", res.metrics.mean_iterations},
               {"mean_xte", res.metrics.mean_xte}};
  if (!quiet) {
    std::printf("%s on %s: %s after %zu steps, %.2f iterations/step, mean xte %.4f m\n",
                variant.c_str(), track_ref.c_str(), to_string(res.end), res.metrics.steps,
                res.metrics.mean_iterations, res.metrics.mean_xte);
  }
}

void cmd_config(const Globals& g) {
  std::cout << to_json(resolve_config(g)).dump(2) << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Warm-started sampling-free MPC: data collection, training and benchmarks"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");
  app.failure_message(CLI::FailureMessage::help);

  Globals g;
  bool quiet = false;
  app.add_option("--config", g.config_path, "JSON configuration file")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Base seed for every stochastic stage");
  app.add_option("--out-dir", g.out_dir, "Directory for outputs and the run manifest")
      ->capture_default_str();
  app.add_flag("-q,--quiet", quiet, "Only write files");
  app.fallthrough();

  auto* gen = app.add_subcommand("gen-tracks", "Write the synthetic tracks as waypoint CSV");
  std::string track_names = "straight,circle,s_curve,hairpin";
  gen->add_option("--tracks", track_names, "Comma-separated synthetic track names")
      ->capture_default_str();

  auto* collect = app.add_subcommand("collect", "Record expert demonstrations");
  std::optional<std::size_t> n;
  collect->add_option("-n,--n", n, "Number of demonstrations");

  auto* train = app.add_subcommand("train-bc", "Behavior cloning on recorded demonstrations");
  std::string demos_path;
  std::optional<std::size_t> epochs;
  train->add_option("--demos", demos_path, "Demonstration file from collect")->required();
  train->add_option("--epochs", epochs, "Training epochs");

  auto* ft = app.add_subcommand("finetune", "PPO fine-tuning against the realtime controller");
  std::string ft_policy;
  std::optional<std::size_t> steps;
  std::optional<double> lambda;
  std::string time_mode;
  ft->add_option("--policy", ft_policy, "BC policy checkpoint")->required();
  ft->add_option("--steps", steps, "Total environment steps");
  ft->add_option("--lambda", lambda, "RL share of the combined loss, in [0, 1]");
  ft->add_option("--time-mode", time_mode, "iterations_proxy or wall_clock");

  auto* eval = app.add_subcommand("evaluate", "Compare warm-start variants on a track set");
  std::string track_set = "training";
  std::string variants = "zeros,bc,finetuned";
  std::string bc_path, finetuned_path;
  eval->add_option("--track-set", track_set, "training, holdout-complex or holdout-simple")
      ->capture_default_str();
  eval->add_option("--variants", variants,
                   "Comma-separated: zeros, previous_shifted, bc, finetuned")
      ->capture_default_str();
  eval->add_option("--policy-bc", bc_path, "Checkpoint for the bc variant");
  eval->add_option("--policy-finetuned", finetuned_path, "Checkpoint for the finetuned variant");

  auto* analyze = app.add_subcommand("analyze", "Curvature against tracking error for one episode");
  std::string an_track = "hairpin";
  std::string an_variant = "bc";
  std::string an_policy;
  std::uint64_t an_seed = 0;
  analyze->add_option("--track", an_track, "Synthetic track name or waypoint CSV")
      ->capture_default_str();
  analyze->add_option("--variant", an_variant, "zeros, previous_shifted, bc or finetuned")
      ->capture_default_str();
  analyze->add_option("--policy", an_policy, "Checkpoint for a policy variant");
  analyze->add_option("--episode-seed", an_seed, "Start perturbation seed")->capture_default_str();

  auto* show = app.add_subcommand("config", "Print the resolved configuration");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  CLI::App* active = app.get_subcommands().front();
  try {
    if (active == show) {
      cmd_config(g);
      return 0;
    }
    fs::create_directories(g.out_dir);
    Manifest m(active->get_name(), argc, argv);
    if (active == gen) {
      cmd_gen_tracks(g, m, track_names, quiet);
    } else if (active == collect) {
      cmd_collect(g, m, n, quiet);
    } else if (active == train) {
      cmd_train_bc(g, m, demos_path, epochs, quiet);
    } else if (active == ft) {
      cmd_finetune(g, m, ft_policy, steps, lambda, time_mode, quiet);
    } else if (active == eval) {
      cmd_evaluate(g, m, track_set, variants, bc_path, finetuned_path, quiet);
    } else if (active == analyze) {
      cmd_analyze(g, m, an_track, an_variant, an_policy, an_seed, quiet);
    }
    m.write(g);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << active->help();
    return 2;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << active->help();
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
