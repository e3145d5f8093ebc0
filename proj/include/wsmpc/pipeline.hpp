#ifndef WSMPC_PIPELINE_HPP_
#define WSMPC_PIPELINE_HPP_

// The collect -> train-bc -> finetune -> evaluate stages, wired to a
// PipelineConfig. Shared by the command-line tool and the acceptance run.

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "wsmpc/bench.hpp"
#include "wsmpc/config.hpp"
#include "wsmpc/learn.hpp"
#include "wsmpc/policy.hpp"

namespace wsmpc {

inline std::vector<Track> bare_tracks(const std::vector<NamedTrack>& named) {
  std::vector<Track> out;
  out.reserve(named.size());
  for (const NamedTrack& t : named) out.push_back(t.track);
  return out;
}

inline std::vector<Demonstration> run_collect(const PipelineConfig& cfg,
                                              DemoStats* stats = nullptr) {
  const std::vector<Track> tracks = bare_tracks(resolve_tracks(cfg.tracks.training, cfg));
  DemoConfig dc = cfg.demos;
  dc.observation = cfg.observation;
  return collect_demos(tracks, dc, stats);
}

inline MlpParams initial_policy(const PipelineConfig& cfg) {
  return make_policy_network(cfg.observation.dim(),
                             2 * static_cast<std::size_t>(cfg.realtime.horizon),
                             cfg.policy_init_seed(), cfg.hidden_units, cfg.initial_log_std);
}

inline BcResult run_train_bc(const PipelineConfig& cfg, const std::vector<Demonstration>& demos,
                             const std::function<void(const BcEpoch&)>& on_epoch = {}) {
  if (!demos.empty() && demos.front().obs.lookahead.size() != cfg.observation.lookahead_count) {
    throw ValidationError("demonstrations were recorded with a different observation layout");
  }
  return train_bc(initial_policy(cfg), demos, cfg.bc, on_epoch);
}

inline FinetuneResult run_finetune(const PipelineConfig& cfg, const MlpParams& bc_policy,
                                   const std::function<void(const FinetuneLogRow&)>& on_batch = {}) {
  MlpParams policy = bc_policy;
  // BC never touches the spread, so this only matters for checkpoints made
  // with another setting.
  for (double& s : policy.log_std) s = cfg.initial_log_std;
  MlpParams value = make_value_network(cfg.observation.dim(), cfg.value_init_seed(),
                                       cfg.hidden_units);
  value.input_shift = policy.input_shift;
  value.input_scale = policy.input_scale;
  const std::vector<Track> tracks = bare_tracks(resolve_tracks(cfg.tracks.training, cfg));
  return finetune(policy, value, tracks, cfg.realtime, cfg.finetune, cfg.finetune_steps,
                  cfg.finetune_seed(), on_batch);
}

inline const std::vector<std::string>& known_variants() {
  static const std::vector<std::string> names{"zeros", "previous_shifted", kBcVariant,
                                              kFinetunedVariant};
  return names;
}

// Unknown variant names and policy variants without a checkpoint are
// rejected here, before any episode runs.
inline ExperimentPlan make_plan(const PipelineConfig& cfg, const std::string& track_set,
                                const std::vector<std::string>& variants,
                                const std::optional<MlpParams>& bc,
                                const std::optional<MlpParams>& finetuned) {
  ExperimentPlan plan;
  plan.track_set = track_set;
  plan.tracks = resolve_tracks(cfg.tracks.get(track_set), cfg);
  plan.seeds = cfg.eval_seeds;
  plan.controller = cfg.realtime;
  plan.episode = cfg.episode;
  plan.episode.observation = cfg.observation;
  for (const std::string& name : variants) {
    if (name == "zeros") {
      plan.variants.push_back({name, WarmStartSource::kZeros, std::nullopt});
    } else if (name == "previous_shifted") {
      plan.variants.push_back({name, WarmStartSource::kPreviousShifted, std::nullopt});
    } else if (name == kBcVariant || name == kFinetunedVariant) {
      const std::optional<MlpParams>& p = name == kBcVariant ? bc : finetuned;
      if (!p) throw ValidationError("variant '" + name + "' needs a policy checkpoint");
      if (p->input_dim() != cfg.observation.dim()) {
        throw StructuralError("policy for variant '" + name +
                              "' expects a different observation size");
      }
      plan.variants.push_back({name, WarmStartSource::kPolicy, p});
    } else {
      throw ValidationError("unknown variant '" + name +
                            "' (expected zeros, previous_shifted, bc or finetuned)");
    }
  }
  plan.validate();
  return plan;
}

}  // namespace wsmpc

#endif  // WSMPC_PIPELINE_HPP_
