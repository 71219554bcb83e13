#include "dmeta/params.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

namespace dmeta {

int ParameterSet::add(ParamItem item) {
  if (find(item.name) >= 0) {
    throw std::invalid_argument("duplicate parameter name: " + item.name);
  }
  items_.push_back(std::move(item));
  return static_cast<int>(items_.size()) - 1;
}

int ParameterSet::find(std::string_view name) const {
  for (std::size_t i = 0; i < items_.size(); ++i) {
    if (items_[i].name == name) return static_cast<int>(i);
  }
  return -1;
}

std::int64_t ParameterSet::total_values() const {
  std::int64_t n = 0;
  for (const auto& it : items_) n += it.tensor.numel();
  return n;
}

bool ParameterSet::congruent(const ParameterSet& other) const {
  if (items_.size() != other.items_.size()) return false;
  for (std::size_t i = 0; i < items_.size(); ++i) {
    const auto& a = items_[i];
    const auto& b = other.items_[i];
    if (a.name != b.name || a.role != b.role || a.head != b.head ||
        a.trainable != b.trainable || a.tensor.shape != b.tensor.shape) {
      return false;
    }
  }
  return true;
}

namespace {

bool bits_equal(const Tensor& a, const Tensor& b) {
  return a.shape == b.shape &&
         std::memcmp(a.ptr(), b.ptr(), a.data.size() * sizeof(float)) == 0;
}

}  // namespace

bool ParameterSet::equals(const ParameterSet& other) const {
  if (!congruent(other)) return false;
  for (std::size_t i = 0; i < items_.size(); ++i) {
    if (!bits_equal(items_[i].tensor, other.items_[i].tensor)) return false;
  }
  return true;
}

bool ParameterSet::body_equals(const ParameterSet& other) const {
  if (!congruent(other)) return false;
  for (std::size_t i = 0; i < items_.size(); ++i) {
    if (items_[i].head) continue;
    if (!bits_equal(items_[i].tensor, other.items_[i].tensor)) return false;
  }
  return true;
}

ParameterSet ParameterSet::weighted_mean(const std::vector<const ParameterSet*>& sets,
                                         const std::vector<float>& weights) {
  if (sets.empty()) throw std::invalid_argument("weighted_mean: no parameter sets");
  if (sets.size() != weights.size()) {
    throw std::invalid_argument("weighted_mean: weight count mismatch");
  }
  double sum = 0.0;
  for (float w : weights) {
    if (!(w >= 0.0f)) throw std::invalid_argument("weighted_mean: negative weight");
    sum += w;
  }
  if (std::abs(sum - 1.0) > 1e-6) {
    throw std::invalid_argument("weighted_mean: weights sum to " + std::to_string(sum));
  }
  for (const ParameterSet* s : sets) {
    if (!s->congruent(*sets[0])) {
      throw std::invalid_argument("weighted_mean: incongruent parameter sets");
    }
  }

  ParameterSet out = *sets[0];
  for (std::size_t i = 0; i < out.items_.size(); ++i) {
    Tensor& dst = out.items_[i].tensor;
    const std::int64_t n = dst.numel();
    for (std::int64_t j = 0; j < n; ++j) {
      float acc = 0.0f;
      for (std::size_t s = 0; s < sets.size(); ++s) {
        acc += weights[s] * sets[s]->items_[i].tensor[j];
      }
      dst[j] = acc;
    }
  }
  return out;
}

ParameterSet ParameterSet::interpolate(const ParameterSet& origin,
                                       const ParameterSet& target, float step) {
  if (!(step >= 0.0f && step <= 1.0f)) {
    throw std::invalid_argument("interpolate: step must be in [0,1]");
  }
  return weighted_mean({&origin, &target}, {1.0f - step, step});
}

}  // namespace dmeta
