#include "dmeta/inner_loop.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "dmeta/adam.hpp"
#include "dmeta/errors.hpp"
#include "dmeta/tape.hpp"

namespace dmeta {

namespace {

constexpr float kScaleEpsilon = 1e-6f;

void check_finite_loss(float loss, const char* what, int round) {
  if (!std::isfinite(loss)) {
    throw NumericError(std::string(what) + " produced a non-finite loss at round " +
                       std::to_string(round));
  }
}

struct HeadIds {
  int weight = -1;
  int bias = -1;
};

HeadIds head_items(const ParameterSet& params) {
  HeadIds ids;
  ids.weight = params.find("fc.weight");
  ids.bias = params.find("fc.bias");
  if (ids.weight < 0 || ids.bias < 0) {
    throw std::invalid_argument("parameter set has no fc head");
  }
  return ids;
}

/// Head forward on precomputed features, optionally with dropout on the
/// inputs to the fully connected layer.
Tensor head_logits(const ParameterSet& params, const Tensor& features,
                   float dropout_rate, RngStream* rng) {
  const HeadIds ids = head_items(params);
  TapeF tape;
  int x = tape.constant(features);
  if (dropout_rate > 0.0f) x = tape.dropout(x, dropout_rate, *rng);
  const int w = tape.leaf(params.item(static_cast<std::size_t>(ids.weight)).tensor, false);
  const int b = tape.leaf(params.item(static_cast<std::size_t>(ids.bias)).tensor, false);
  return tape.value(tape.fully_connected(x, w, b));
}

/// One Adam step of the archive index head on frozen features.
float index_head_step(ParameterSet& index, AdamState& adam, const Tensor& features,
                      const Tensor& targets) {
  const HeadIds ids = head_items(index);
  TapeF tape;
  const int x = tape.constant(features);
  const int w = tape.leaf(index.item(static_cast<std::size_t>(ids.weight)).tensor, true);
  const int b = tape.leaf(index.item(static_cast<std::size_t>(ids.bias)).tensor, true);
  const int loss = tape.softmax_cross_entropy(tape.fully_connected(x, w, b), targets);
  const float lv = tape.value(loss)[0];
  tape.backward(loss);
  std::vector<Tensor> grads(index.size());
  grads[static_cast<std::size_t>(ids.weight)] = tape.grad(w);
  grads[static_cast<std::size_t>(ids.bias)] = tape.grad(b);
  adam.step(index, grads);
  return lv;
}

/// One full-network Adam step on a cross-entropy loss; batchnorm runs in
/// train mode, so running statistics of `params` advance. A single-image
/// batch falls back to spatial-only statistics (train mode rejects B = 1).
float full_train_step(const Model& model, ParameterSet& params, AdamState& adam,
                      const Tensor& images, const Tensor& targets) {
  TapeF tape;
  const BnMode bn = images.dim(0) >= 2 ? BnMode::Train : BnMode::BatchStats;
  Model::Graph g = model.build(tape, params, images,
                               ForwardOptions{bn, 0.0f, nullptr},
                               TrainScope::All);
  const int loss = tape.softmax_cross_entropy(g.logits, targets);
  const float lv = tape.value(loss)[0];
  tape.backward(loss);
  adam.step(params, model.gather_grads(tape, g));
  return lv;
}

}  // namespace

void InnerLoopConfig::validate() const {
  if (joint_steps < 1) throw std::invalid_argument("inner: joint_steps must be >= 1");
  if (learner_steps < 0) throw std::invalid_argument("inner: learner_steps must be >= 0");
  if (!(sigma_init > 0.0f)) throw std::invalid_argument("inner: sigma_init must be > 0");
  if (!(sigma_growth > 1.0f)) throw std::invalid_argument("inner: sigma_growth must be > 1");
  if (!(sigma_cap >= sigma_init)) throw std::invalid_argument("inner: sigma_cap < sigma_init");
  if (!(dropout_rate >= 0.0f && dropout_rate < 1.0f)) {
    throw std::invalid_argument("inner: dropout_rate must be in [0,1)");
  }
}

float match_fraction(const std::vector<int>& a, const std::vector<int>& b) {
  if (a.size() != b.size() || a.empty()) {
    throw std::invalid_argument("match_fraction: size mismatch");
  }
  int hits = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] == b[i]) ++hits;
  }
  return static_cast<float>(hits) / static_cast<float>(a.size());
}

Tensor one_hot(const std::vector<int>& labels, int num_classes) {
  Tensor t({static_cast<int>(labels.size()), num_classes});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= num_classes) {
      throw std::invalid_argument("one_hot: label out of range");
    }
    t[static_cast<std::int64_t>(i) * num_classes + labels[i]] = 1.0f;
  }
  return t;
}

std::vector<Tensor> safe_mutation_scales(const Model& model, const ParameterSet& params,
                                         const Tensor& batch) {
  TapeF tape;
  tape.set_abs_param_grads(true);
  Model::Graph g = model.build(tape, params, batch,
                               ForwardOptions{BnMode::BatchStatsDetached, 0.0f, nullptr},
                               TrainScope::All);
  const Tensor& logits = tape.value(g.logits);
  const int B = logits.dim(0), C = logits.dim(1);

  std::vector<Tensor> acc(params.size());
  for (int c = 0; c < C; ++c) {
    tape.zero_grads();
    Tensor seed({B, C});
    for (int b = 0; b < B; ++b) {
      seed[static_cast<std::int64_t>(b) * C + c] = 1.0f / static_cast<float>(B);
    }
    tape.backward_seed(g.logits, seed);
    for (std::size_t i = 0; i < params.size(); ++i) {
      const int leaf = g.leaves[i];
      if (leaf < 0 || !params.item(i).trainable) continue;
      const Tensor& grad = tape.grad(leaf);
      if (acc[i].data.empty()) {
        acc[i] = grad;
      } else {
        for (std::int64_t j = 0; j < grad.numel(); ++j) acc[i][j] += grad[j];
      }
    }
  }

  std::vector<Tensor> scales(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (acc[i].data.empty()) continue;
    scales[i] = Tensor(acc[i].shape);
    for (std::int64_t j = 0; j < acc[i].numel(); ++j) {
      const float g_mean = acc[i][j] / static_cast<float>(C);
      if (!std::isfinite(g_mean)) {
        throw NumericError("non-finite gradient in mutation sensitivity probe (" +
                           params.item(i).name + ")");
      }
      scales[i][j] = 1.0f / (kScaleEpsilon + g_mean);
    }
  }
  return scales;
}

void normalize_scales_per_layer(std::vector<Tensor>& scales) {
  for (Tensor& s : scales) {
    if (s.data.empty()) continue;
    double mean = 0.0;
    for (std::int64_t j = 0; j < s.numel(); ++j) mean += s[j];
    mean /= static_cast<double>(s.numel());
    if (mean <= 0.0) continue;
    for (std::int64_t j = 0; j < s.numel(); ++j) {
      s[j] = static_cast<float>(s[j] / mean);
    }
  }
}

NoiseResult inject_noise(const Model& model, const ParameterSet& origin,
                         const std::vector<Tensor>& scales, const Tensor& batch,
                         const InnerLoopConfig& config, RngStream rng) {
  if (scales.size() != origin.size()) {
    throw std::invalid_argument("inject_noise: scales misaligned with parameters");
  }
  const ForwardOptions opts{BnMode::BatchStats, 0.0f, nullptr};
  const std::vector<int> base = model.predict(origin, batch, opts);

  double sigma = config.sigma_init;
  for (;;) {
    const double trial = std::min<double>(sigma, config.sigma_cap);
    ParameterSet teacher = origin;
    for (std::size_t i = 0; i < scales.size(); ++i) {
      if (scales[i].data.empty()) continue;
      Tensor& t = teacher.item(i).tensor;
      for (std::int64_t j = 0; j < t.numel(); ++j) {
        t[j] += scales[i][j] * static_cast<float>(rng.normal(0.0, trial));
      }
    }
    const std::vector<int> preds = model.predict(teacher, batch, opts);
    int diff = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
      if (preds[i] != base[i]) ++diff;
    }
    if (diff > 0) {
      return NoiseResult{std::move(teacher), static_cast<float>(trial), false, diff};
    }
    if (trial >= config.sigma_cap) {
      return NoiseResult{origin, config.sigma_cap, true, 0};
    }
    sigma *= config.sigma_growth;
  }
}

JointResult joint_optimize(const Model& model, const ParameterSet& meta_params,
                           ParameterSet teacher, const Tensor& batch,
                           const InnerLoopConfig& config, RngStream dropout_rng) {
  config.validate();
  const int num_logits = model.spec().num_logits;

  ParameterSet index = meta_params;   // frozen body, mutable head
  ParameterSet robust = meta_params;  // full-network copy
  AdamState index_adam(index, AdamConfig{config.index_lr, 0.0f, 0.999f, 1e-8f},
                       TrainScope::HeadOnly);
  AdamState robust_adam(robust, AdamConfig{config.robust_lr, 0.0f, 0.999f, 1e-8f},
                        TrainScope::All);
  AdamState teacher_adam(teacher, AdamConfig{config.teacher_lr, 0.9f, 0.999f, 1e-8f},
                         TrainScope::All);

  // The archive body never moves, so its features over this batch are
  // constants for the whole joint optimization.
  const ForwardOptions frozen{BnMode::BatchStats, 0.0f, nullptr};
  const Tensor archive_features = model.features(index, batch, frozen);

  for (int round = 0; round < config.joint_steps; ++round) {
    // teacher forward is shared by the round: clean targets, dropout
    // targets and the teacher's own update
    TapeF teacher_tape;
    Model::Graph tg = model.build(teacher_tape, teacher, batch,
                                  ForwardOptions{BnMode::Train, 0.0f, nullptr},
                                  TrainScope::All);
    // value references go stale once more ops land on the tape; consume
    // them before step (3) extends it
    const Tensor& teacher_features = teacher_tape.value(tg.flat);
    const Tensor clean_targets =
        one_hot(argmax_rows(teacher_tape.value(tg.logits)), num_logits);

    // (1) archive index fits the teacher's current behavior
    const float index_loss =
        index_head_step(index, index_adam, archive_features, clean_targets);
    check_finite_loss(index_loss, "archive index", round);

    // (2) robust copy trains on dropout-noised teacher predictions
    RngStream mask = dropout_rng.derive("mask", round);
    const Tensor noisy_logits =
        head_logits(teacher, teacher_features, config.dropout_rate, &mask);
    const Tensor noisy_targets = one_hot(argmax_rows(noisy_logits), num_logits);
    const float robust_loss =
        full_train_step(model, robust, robust_adam, batch, noisy_targets);
    check_finite_loss(robust_loss, "robust copy", round);

    // (3) teacher moves against the index's best current fit
    const Tensor index_logits = head_logits(index, archive_features, 0.0f, nullptr);
    const int p = teacher_tape.softmax(teacher_tape.constant(index_logits));
    const int q = teacher_tape.softmax(tg.logits);
    const int loss = teacher_tape.scale(teacher_tape.js_divergence(p, q), -1.0f);
    check_finite_loss(teacher_tape.value(loss)[0], "teacher", round);
    teacher_tape.backward(loss);
    teacher_adam.step(teacher, model.gather_grads(teacher_tape, tg));
  }

  const std::vector<int> final_preds = model.predict(teacher, batch, frozen);
  const std::vector<int> index_preds =
      argmax_rows(head_logits(index, archive_features, 0.0f, nullptr));
  const std::vector<int> robust_preds = model.predict(robust, batch, frozen);

  JointResult result;
  result.teacher = std::move(teacher);
  result.index = std::move(index);
  result.a_novelty = match_fraction(index_preds, final_preds);
  result.a_robustness = match_fraction(robust_preds, final_preds);
  return result;
}

ParameterSet train_on_labels(const Model& model, ParameterSet start,
                             const Tensor& images, const std::vector<int>& labels,
                             int steps, float lr, int minibatch,
                             RngStream* shuffle_rng) {
  const int B = images.dim(0);
  if (static_cast<int>(labels.size()) != B) {
    throw std::invalid_argument("train_on_labels: label count mismatch");
  }
  AdamState adam(start, AdamConfig{lr, 0.0f, 0.999f, 1e-8f}, TrainScope::All);
  const Tensor full_targets = one_hot(labels, model.spec().num_logits);

  if (minibatch <= 0 || minibatch >= B) {
    for (int s = 0; s < steps; ++s) {
      const float loss = full_train_step(model, start, adam, images, full_targets);
      check_finite_loss(loss, "task training", s);
    }
    return start;
  }

  // minibatch mode: cycle through a (re)shuffled order
  std::vector<int> order(static_cast<std::size_t>(B));
  for (int i = 0; i < B; ++i) order[static_cast<std::size_t>(i)] = i;
  if (shuffle_rng) shuffle_rng->shuffle(order);
  std::size_t cursor = 0;
  const std::int64_t stride = images.numel() / B;
  for (int s = 0; s < steps; ++s) {
    const int take = std::min<int>(minibatch, B);
    Tensor mb_images({take, images.dim(1), images.dim(2), images.dim(3)});
    std::vector<int> mb_labels(static_cast<std::size_t>(take));
    for (int i = 0; i < take; ++i) {
      if (cursor == order.size()) {
        cursor = 0;
        if (shuffle_rng) shuffle_rng->shuffle(order);
      }
      const int src = order[cursor++];
      std::copy_n(images.ptr() + src * stride, stride, mb_images.ptr() + i * stride);
      mb_labels[static_cast<std::size_t>(i)] = labels[static_cast<std::size_t>(src)];
    }
    const float loss = full_train_step(model, start, adam, mb_images,
                                       one_hot(mb_labels, model.spec().num_logits));
    check_finite_loss(loss, "task training", s);
  }
  return start;
}

ParameterSet train_learner(const Model& model, const ParameterSet& meta_params,
                           const ParameterSet& teacher, const Tensor& batch,
                           const InnerLoopConfig& config) {
  const std::vector<int> targets =
      model.predict(teacher, batch, ForwardOptions{BnMode::BatchStats, 0.0f, nullptr});
  return train_on_labels(model, meta_params, batch, targets, config.learner_steps,
                         config.learner_lr, config.learner_minibatch, nullptr);
}

InnerOutcome run_inner(const Model& model, const ParameterSet& meta_params,
                       const TaskBatch& batch, const InnerLoopConfig& config,
                       RngStream rng, bool train_all_found) {
  config.validate();
  InnerOutcome outcome;
  outcome.record.rng_origin = rng.origin();

  std::vector<Tensor> scales = safe_mutation_scales(model, meta_params, batch.images);
  normalize_scales_per_layer(scales);

  NoiseResult noise = inject_noise(model, meta_params, scales, batch.images, config,
                                   rng.derive("noise"));
  outcome.record.sigma_final = noise.sigma_final;
  outcome.record.degenerate = noise.degenerate;
  outcome.record.initial_pred_diff = noise.pred_diff;
  if (noise.degenerate) return outcome;

  JointResult joint = joint_optimize(model, meta_params, std::move(noise.teacher),
                                     batch.images, config, rng.derive("dropout"));
  outcome.record.a_novelty = joint.a_novelty;
  outcome.record.a_robustness = joint.a_robustness;
  outcome.record.value = joint.a_robustness - joint.a_novelty;
  outcome.record.accepted = outcome.record.value > 0.0f;
  outcome.record.teacher_predictions =
      model.predict(joint.teacher, batch.images,
                    ForwardOptions{BnMode::BatchStats, 0.0f, nullptr});

  if (outcome.record.accepted || train_all_found) {
    outcome.learner =
        train_learner(model, meta_params, joint.teacher, batch.images, config);
  }
  return outcome;
}

float index_fit_accuracy(const Model& model, const ParameterSet& meta_params,
                         const std::vector<int>& teacher_predictions,
                         const Tensor& batch, const InnerLoopConfig& config) {
  const ForwardOptions frozen{BnMode::BatchStats, 0.0f, nullptr};
  const Tensor features = model.features(meta_params, batch, frozen);
  const Tensor targets = one_hot(teacher_predictions, model.spec().num_logits);

  ParameterSet index = meta_params;
  AdamState adam(index, AdamConfig{config.index_lr, 0.0f, 0.999f, 1e-8f},
                 TrainScope::HeadOnly);
  for (int round = 0; round < config.joint_steps; ++round) {
    const float loss = index_head_step(index, adam, features, targets);
    check_finite_loss(loss, "index refit", round);
  }
  const std::vector<int> fitted = argmax_rows(head_logits(index, features, 0.0f, nullptr));
  return match_fraction(fitted, teacher_predictions);
}

}  // namespace dmeta
