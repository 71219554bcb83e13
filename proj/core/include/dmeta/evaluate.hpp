#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "dmeta/dataset.hpp"
#include "dmeta/model.hpp"
#include "dmeta/tasks.hpp"

namespace dmeta {

struct FineTuneConfig {
  int steps = 50;
  float lr = 1e-3f;
  bool transductive = true;  ///< query batch statistics in normalization layers
};

/// Fine-tunes a fresh copy on the task's support set: the head is re-zeroed,
/// then `steps` full-support Adam (beta1 = 0) cross-entropy updates. The
/// head width must equal the task's way.
ParameterSet fine_tune(const Model& model, const ParameterSet& start,
                       const EvalTask& task, const FineTuneConfig& config);

struct EvalSpec {
  int way = 5;
  int shot = 5;
  int query_per_class = 1;
  int num_tasks = 1000;
  FineTuneConfig fine_tune;
  int workers = 1;
  bool keep_per_task = false;

  void validate() const;
};

struct EvalReport {
  std::string mode;
  int way = 0;
  int shot = 0;
  int num_tasks = 0;
  double mean_accuracy = 0.0;
  double ci95_half_width = 0.0;
  std::vector<float> per_task;  ///< retained when keep_per_task is set

  nlohmann::json to_json() const;
};

/// N-way K-shot protocol: per task, sample from the evaluation split,
/// fine-tune a fresh parameter copy, measure query accuracy with predict().
/// Tasks run in parallel on per-task rng streams; results are independent
/// of the worker count. The input parameters are never mutated.
EvalReport evaluate(const Model& model, const ParameterSet& params,
                    const Dataset& eval_split, const EvalSpec& spec,
                    std::uint64_t seed);

/// One CSV row per query image: task id, true class, predicted class, and
/// the N logit values.
void export_logits(const Model& model, const ParameterSet& tuned_params,
                   const EvalTask& task, int task_id, bool transductive,
                   std::ostream& out);

}  // namespace dmeta
