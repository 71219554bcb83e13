#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dmeta/dataset.hpp"
#include "dmeta/inner_loop.hpp"
#include "dmeta/model.hpp"

namespace dmeta {

enum class MetaMode {
  DivergentQd,        ///< proposed method: value-weighted divergent search
  DivergentOnly,      ///< ablation: every found behavior accepted, uniform weights
  Supervised,         ///< ground-truth N-way K-shot Reptile
  UmtraLowAug,        ///< statistically-favorable sampling + low augmentation
  FixedRandomLabels,  ///< permanent uniform-random label per image
  RandomSearch,       ///< fresh uniform-random labels per task
  None,               ///< no pretraining (random-initialization baseline)
};

MetaMode parse_meta_mode(const std::string& name);
std::string to_string(MetaMode mode);

struct MetaConfig {
  MetaMode mode = MetaMode::DivergentQd;
  int meta_iterations = 100;
  int tasks_per_step = 5;  ///< n inner loops per meta-iteration
  float meta_step_start = 1.0f;
  float meta_step_end = 0.0f;  ///< linear anneal over meta_iterations
  std::uint64_t seed = 1;
  int workers = 1;
  int ambiguous_batch_size = 90;  ///< 90 Omniglot, 20 Mini-ImageNet
  int pseudo_task_size = 25;      ///< batch size for the random-label modes
  int supervised_shots = 5;
  int umtra_variants = 5;  ///< copies per source image, identity included
  int checkpoint_every = 0;

  void validate() const;
};

struct MetaState {
  ParameterSet params;
  int iteration = 0;
  std::int64_t accepted = 0;
  std::int64_t discarded = 0;
};

/// Normalizes the strictly positive values to unit sum, takes the weighted
/// mean of the learners and interpolates the current parameters toward it.
/// An empty learner list is the skip signal: returns false, no change.
bool apply_meta_step(MetaState& state, const std::vector<ParameterSet>& learners,
                     const std::vector<float>& values, float step_size);

struct MetaHooks {
  /// Test stub replacing run_inner in the divergent modes.
  std::function<InnerOutcome(int task_index, const TaskBatch&, RngStream)> inner_override;
  std::function<void(const nlohmann::json&)> on_meta_row;
  std::function<void(const nlohmann::json&)> on_inner_row;
  std::function<void(int iteration, const ParameterSet&)> on_checkpoint;
};

/// Runs the configured pretraining mode from a seeded initialization and
/// returns the final parameters. Mode None returns the initialization
/// unchanged. Fully deterministic given (config, inner); worker count does
/// not affect results.
ParameterSet run_pretraining(const Model& model, const Dataset& pretraining,
                             const MetaConfig& config, const InnerLoopConfig& inner,
                             const MetaHooks* hooks = nullptr);

}  // namespace dmeta
