#pragma once

#include <string>
#include <vector>

#include "dmeta/tensor.hpp"

namespace dmeta {

/// Images plus (pseudo-)labels defining one inner-loop task. Labels are
/// empty for samplers that produce unlabelled batches; the divergent inner
/// loop never reads them.
struct TaskBatch {
  Tensor images;            ///< [B,C,H,W]
  std::vector<int> labels;  ///< one per image in {0..C-1}, or empty
  std::string provenance;   ///< sampler name
};

/// N-way K-shot support set plus query set with task-local labels 0..N-1.
struct EvalTask {
  Tensor support_images;
  std::vector<int> support_labels;
  Tensor query_images;
  std::vector<int> query_labels;
  std::vector<int> class_ids;  ///< original dataset classes, bookkeeping only
  int way = 0;
  int shot = 0;
};

}  // namespace dmeta
