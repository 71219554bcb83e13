#pragma once

#include <cstdint>
#include <vector>

#include "dmeta/params.hpp"
#include "dmeta/tensor.hpp"

namespace dmeta {

struct AdamConfig {
  float lr = 1e-3f;
  float beta1 = 0.0f;  ///< 0 disables momentum (Reptile convention)
  float beta2 = 0.999f;
  float epsilon = 1e-8f;
};

/// Adam with bias correction over the in-scope trainable items of one
/// ParameterSet. Moment buffers are allocated per tracked item and match
/// its shape.
class AdamState {
 public:
  AdamState(const ParameterSet& params, AdamConfig cfg, TrainScope scope);

  /// Applies one update. `grads` is aligned to the parameter items; every
  /// tracked item must have a gradient of matching shape. Throws
  /// NumericError naming the parameter on non-finite gradient values.
  void step(ParameterSet& params, const std::vector<Tensor>& grads);

  std::int64_t step_count() const { return step_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  TrainScope scope_;
  std::int64_t step_ = 0;
  float beta1_pow_ = 1.0f;
  float beta2_pow_ = 1.0f;
  std::vector<Tensor> m_, v_;  // empty for untracked items
};

}  // namespace dmeta
