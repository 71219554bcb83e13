#include "dmeta/adam.hpp"

#include <cmath>
#include <stdexcept>

#include "dmeta/errors.hpp"

namespace dmeta {

AdamState::AdamState(const ParameterSet& params, AdamConfig cfg, TrainScope scope)
    : cfg_(cfg), scope_(scope) {
  if (!(cfg_.lr >= 0.0f)) throw std::invalid_argument("adam: lr must be non-negative");
  if (!(cfg_.beta1 >= 0.0f && cfg_.beta1 < 1.0f) ||
      !(cfg_.beta2 >= 0.0f && cfg_.beta2 < 1.0f)) {
    throw std::invalid_argument("adam: betas must be in [0,1)");
  }
  m_.resize(params.size());
  v_.resize(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params.in_scope(i, scope_)) {
      m_[i] = Tensor(params.item(i).tensor.shape);
      v_[i] = Tensor(params.item(i).tensor.shape);
    }
  }
}

void AdamState::step(ParameterSet& params, const std::vector<Tensor>& grads) {
  if (grads.size() != params.size()) {
    throw std::invalid_argument("adam: gradient vector misaligned with parameters");
  }
  ++step_;
  beta1_pow_ *= cfg_.beta1;
  beta2_pow_ *= cfg_.beta2;
  const float bc1 = 1.0f - beta1_pow_;
  const float bc2 = 1.0f - beta2_pow_;

  for (std::size_t i = 0; i < params.size(); ++i) {
    if (m_[i].data.empty()) continue;
    const ParamItem& it = params.item(i);
    const Tensor& g = grads[i];
    if (g.shape != it.tensor.shape) {
      throw std::invalid_argument("adam: gradient shape mismatch for " + it.name);
    }
    for (std::int64_t j = 0; j < g.numel(); ++j) {
      if (!std::isfinite(g[j])) {
        throw NumericError("non-finite gradient in parameter " + it.name);
      }
    }
    Tensor& p = params.item(i).tensor;
    Tensor& m = m_[i];
    Tensor& v = v_[i];
    for (std::int64_t j = 0; j < g.numel(); ++j) {
      m[j] = cfg_.beta1 * m[j] + (1.0f - cfg_.beta1) * g[j];
      v[j] = cfg_.beta2 * v[j] + (1.0f - cfg_.beta2) * g[j] * g[j];
      const float mhat = m[j] / bc1;
      const float vhat = v[j] / bc2;
      p[j] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.epsilon);
    }
  }
}

}  // namespace dmeta
