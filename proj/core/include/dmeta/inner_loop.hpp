#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "dmeta/model.hpp"
#include "dmeta/params.hpp"
#include "dmeta/rng.hpp"
#include "dmeta/tasks.hpp"

namespace dmeta {

struct InnerLoopConfig {
  int joint_steps = 20;    ///< rounds of joint index/robust/teacher optimization
  int learner_steps = 10;  ///< learner updates per task
  float teacher_lr = 1e-3f;
  float index_lr = 1e-2f;
  float robust_lr = 1e-3f;
  float learner_lr = 1e-3f;
  float sigma_init = 1e-3f;
  float sigma_growth = 2.0f;
  float sigma_cap = 1.0f;
  float dropout_rate = 0.5f;  ///< Bernoulli rate on the teacher's fc inputs
  int learner_minibatch = 0;  ///< 0: full task batch every step

  void validate() const;
};

/// Teacher behavior over one batch with its novelty/robustness scores.
struct BehaviorRecord {
  std::vector<int> teacher_predictions;
  float a_novelty = 0.0f;
  float a_robustness = 0.0f;
  float value = 0.0f;  ///< a_robustness - a_novelty
  bool accepted = false;
  bool degenerate = false;  ///< noise search hit sigma_cap without a change
  float sigma_final = 0.0f;
  int initial_pred_diff = 0;  ///< differing predictions right after noise
  std::uint64_t rng_origin = 0;
};

/// Fraction of positions where the two prediction vectors agree; exact
/// multiple of 1/size.
float match_fraction(const std::vector<int>& a, const std::vector<int>& b);

/// One-hot rows for hard labels.
Tensor one_hot(const std::vector<int>& labels, int num_classes);

/// Per-weight mutation scale s = 1 / (1e-6 + g), where g is the mean over
/// the batch and over output logits of |d logit / d w|. Computed with
/// batch statistics frozen in the normalization layers so per-sample
/// derivatives are well defined. Output is aligned to the parameter items;
/// non-trainable items get empty tensors. Head scales are computed like
/// body scales.
std::vector<Tensor> safe_mutation_scales(const Model& model, const ParameterSet& params,
                                         const Tensor& batch);

/// Rescales each parameter tensor's scales to unit mean, keeping sigma
/// comparable across layers.
void normalize_scales_per_layer(std::vector<Tensor>& scales);

struct NoiseResult {
  ParameterSet teacher;
  float sigma_final = 0.0f;
  bool degenerate = false;
  int pred_diff = 0;
};

/// phi = theta + s*eta with eta ~ Normal(0, sigma) drawn fresh per trial;
/// sigma starts at sigma_init and grows by sigma_growth until the teacher's
/// predictions differ from the origin's in at least one position, or sigma
/// reaches sigma_cap (degenerate mutation; caller discards the iteration).
NoiseResult inject_noise(const Model& model, const ParameterSet& origin,
                         const std::vector<Tensor>& scales, const Tensor& batch,
                         const InnerLoopConfig& config, RngStream rng);

struct JointResult {
  ParameterSet teacher;
  ParameterSet index;  ///< archive body + optimized head
  float a_novelty = 0.0f;
  float a_robustness = 0.0f;
};

/// Runs config.joint_steps rounds; per round, in order: (1) archive-head
/// step fitting the index to the teacher's clean predictions (body frozen),
/// (2) full-network robust-copy step on dropout-noised teacher predictions,
/// (3) teacher step maximizing JS divergence from the index outputs.
/// Returns the optimized teacher and the final accuracies of the two
/// archive copies against the teacher's clean behavior.
JointResult joint_optimize(const Model& model, const ParameterSet& meta_params,
                           ParameterSet teacher, const Tensor& batch,
                           const InnerLoopConfig& config, RngStream dropout_rng);

/// Generic task training: Adam (beta1 = 0) cross-entropy steps from `start`
/// toward hard labels. The learner, the supervised baseline and the other
/// label-driven modes all go through here. shuffle_rng is only consulted
/// when minibatching.
ParameterSet train_on_labels(const Model& model, ParameterSet start,
                             const Tensor& images, const std::vector<int>& labels,
                             int steps, float lr, int minibatch,
                             RngStream* shuffle_rng);

/// Reptile-style learner: copy of the meta parameters trained to match the
/// teacher's predictions.
ParameterSet train_learner(const Model& model, const ParameterSet& meta_params,
                           const ParameterSet& teacher, const Tensor& batch,
                           const InnerLoopConfig& config);

struct InnerOutcome {
  std::optional<ParameterSet> learner;
  BehaviorRecord record;
};

/// Full inner loop: sensitivity scales -> noise injection -> joint
/// optimization -> value test -> learner training. The learner is absent
/// for degenerate mutations and, unless train_all_found is set (the
/// diversity-only ablation), for behaviors whose value is not positive.
InnerOutcome run_inner(const Model& model, const ParameterSet& meta_params,
                       const TaskBatch& batch, const InnerLoopConfig& config,
                       RngStream rng, bool train_all_found = false);

/// Retrains a fresh head on fixed teacher predictions and returns its final
/// match fraction. Deterministic; used to check the stability of the
/// novelty estimate.
float index_fit_accuracy(const Model& model, const ParameterSet& meta_params,
                         const std::vector<int>& teacher_predictions,
                         const Tensor& batch, const InnerLoopConfig& config);

}  // namespace dmeta
