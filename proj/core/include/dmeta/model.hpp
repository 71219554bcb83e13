#pragma once

#include <vector>

#include "dmeta/params.hpp"
#include "dmeta/rng.hpp"
#include "dmeta/tape.hpp"
#include "dmeta/tensor.hpp"

namespace dmeta {

/// Architecture description: four 3x3 stride-1 same-padded convolutions,
/// each followed by batch normalization (and, when use_maxpool is set, a
/// 2x2 max-pool) and a ReLU, then one fully-connected layer.
struct NetworkSpec {
  int input_h = 28;
  int input_w = 28;
  int input_c = 1;
  int channels = 64;
  bool use_maxpool = false;
  int num_logits = 5;

  static NetworkSpec omniglot(int way = 5, int channels = 64) {
    return NetworkSpec{28, 28, 1, channels, false, way};
  }
  static NetworkSpec mini_imagenet(int way = 5, int channels = 32) {
    return NetworkSpec{84, 84, 3, channels, true, way};
  }

  static constexpr int kConvLayers = 4;
  static constexpr int kKernel = 3;

  int feature_h() const;
  int feature_w() const;
  /// Input width of the fully-connected layer.
  int feature_dim() const { return channels * feature_h() * feature_w(); }

  void validate() const;
  bool operator==(const NetworkSpec&) const = default;
};

struct ForwardOptions {
  BnMode bn_mode = BnMode::BatchStats;
  float head_dropout = 0.0f;        ///< Bernoulli rate on the fc inputs
  RngStream* dropout_rng = nullptr;
};

/// Batchnorm statistics source for evaluation-time forward passes.
inline BnMode eval_bn_mode(bool transductive) {
  return transductive ? BnMode::BatchStats : BnMode::Running;
}

class Model {
 public:
  explicit Model(NetworkSpec spec);

  const NetworkSpec& spec() const { return spec_; }

  /// Glorot-uniform conv weights, unit gamma, zero beta/bias, zero head,
  /// running stats at (0, 1).
  ParameterSet init_params(RngStream rng) const;

  struct Graph {
    int logits = -1;
    int flat = -1;  ///< flattened conv output (pre-dropout fc input)
    std::vector<int> leaves;  ///< tape id per param item; -1 for running stats
  };

  /// Registers `params` as tape leaves (trainable per `scope`) and builds
  /// the forward graph. In BnMode::Train the running statistics inside
  /// `params` are updated in place; other modes leave `params` untouched.
  Graph build(TapeF& tape, ParameterSet& params, const Tensor& images,
              const ForwardOptions& opts, TrainScope scope) const;
  /// Read-only overload; rejects BnMode::Train.
  Graph build(TapeF& tape, const ParameterSet& params, const Tensor& images,
              const ForwardOptions& opts, TrainScope scope) const;

  /// Forward pass without gradient bookkeeping.
  Tensor logits(const ParameterSet& params, const Tensor& images,
                const ForwardOptions& opts) const;

  /// Flattened conv-stack output [B, feature_dim], before head dropout.
  Tensor features(const ParameterSet& params, const Tensor& images,
                  const ForwardOptions& opts) const;

  /// Row-wise argmax of logits; ties break to the lowest index.
  std::vector<int> predict(const ParameterSet& params, const Tensor& images,
                           const ForwardOptions& opts) const;

  /// Copies gradients out of the tape, aligned to the parameter items.
  /// Untracked items get empty tensors.
  std::vector<Tensor> gather_grads(const TapeF& tape, const Graph& g) const;

 private:
  NetworkSpec spec_;
};

/// Argmax with lowest-index tie-break over each row of [B,C] logits.
std::vector<int> argmax_rows(const Tensor& logits);

}  // namespace dmeta
