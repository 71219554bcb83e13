#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "dmeta/tensor.hpp"

namespace dmeta {

enum class ParamRole {
  ConvWeight,
  ConvBias,
  BnGamma,
  BnBeta,
  BnRunningMean,
  BnRunningVar,
  FcWeight,
  FcBias,
};

/// Which trainable parameters an optimizer may touch.
enum class TrainScope { All, HeadOnly };

struct ParamItem {
  std::string name;
  ParamRole role;
  bool head = false;       ///< belongs to the final fully-connected layer
  bool trainable = false;  ///< false for batchnorm running statistics
  Tensor tensor;
};

/// Named, ordered collection of all network weights. The body (conv and
/// batchnorm parameters, including running statistics) and the head (final
/// fully-connected layer) partition the items. Supports the element-wise
/// algebra used by meta-steps; running statistics participate in averaging
/// like any other value.
class ParameterSet {
 public:
  int add(ParamItem item);

  std::size_t size() const { return items_.size(); }
  ParamItem& item(std::size_t i) { return items_.at(i); }
  const ParamItem& item(std::size_t i) const { return items_.at(i); }
  int find(std::string_view name) const;

  std::int64_t total_values() const;

  bool congruent(const ParameterSet& other) const;

  /// Bitwise data equality.
  bool equals(const ParameterSet& other) const;
  /// Bitwise equality of every non-head item (running stats included).
  bool body_equals(const ParameterSet& other) const;

  bool in_scope(std::size_t i, TrainScope scope) const {
    const ParamItem& it = items_.at(i);
    return it.trainable && (scope == TrainScope::All || it.head);
  }

  /// Element-wise convex combination; weights must be non-negative and sum
  /// to 1 within 1e-6.
  static ParameterSet weighted_mean(const std::vector<const ParameterSet*>& sets,
                                    const std::vector<float>& weights);

  /// origin + step * (target - origin), step in [0,1]. Computed as
  /// weighted_mean({origin, target}, {1-step, step}) so the two routes are
  /// bit-identical.
  static ParameterSet interpolate(const ParameterSet& origin,
                                  const ParameterSet& target, float step);

 private:
  std::vector<ParamItem> items_;
};

}  // namespace dmeta
