#include "dmeta/evaluate.hpp"

#include <cmath>
#include <ostream>
#include <stdexcept>

#include "dmeta/adam.hpp"
#include "dmeta/errors.hpp"
#include "dmeta/inner_loop.hpp"
#include "dmeta/parallel.hpp"
#include "dmeta/samplers.hpp"
#include "dmeta/tape.hpp"

namespace dmeta {

void EvalSpec::validate() const {
  if (way < 2 || shot < 1 || query_per_class < 1) {
    throw std::invalid_argument("eval: way/shot/query out of range");
  }
  if (num_tasks < 1) throw std::invalid_argument("eval: num_tasks must be >= 1");
  if (fine_tune.steps < 0 || !(fine_tune.lr >= 0.0f)) {
    throw std::invalid_argument("eval: bad fine-tune settings");
  }
  if (workers < 1) throw std::invalid_argument("eval: workers must be >= 1");
}

ParameterSet fine_tune(const Model& model, const ParameterSet& start,
                       const EvalTask& task, const FineTuneConfig& config) {
  if (model.spec().num_logits != task.way) {
    throw std::invalid_argument("fine_tune: head width " +
                                std::to_string(model.spec().num_logits) +
                                " does not match task way " + std::to_string(task.way));
  }
  ParameterSet params = start;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params.item(i).head) params.item(i).tensor.fill(0.0f);
  }
  if (config.steps == 0) return params;
  return train_on_labels(model, std::move(params), task.support_images,
                         task.support_labels, config.steps, config.lr,
                         /*minibatch=*/0, nullptr);
}

EvalReport evaluate(const Model& model, const ParameterSet& params,
                    const Dataset& eval_split, const EvalSpec& spec,
                    std::uint64_t seed) {
  spec.validate();
  std::vector<float> accuracies(static_cast<std::size_t>(spec.num_tasks));

  parallel_for(spec.num_tasks, spec.workers, [&](std::int64_t t) {
    RngStream task_rng = RngStream::from_label(seed, "eval").derive("task", t);
    EvalTask task = sample_class_task(eval_split, spec.way, spec.shot,
                                      spec.query_per_class, task_rng);
    const ParameterSet tuned = fine_tune(model, params, task, spec.fine_tune);
    const auto preds = model.predict(
        tuned, task.query_images,
        ForwardOptions{eval_bn_mode(spec.fine_tune.transductive), 0.0f, nullptr});
    accuracies[static_cast<std::size_t>(t)] = match_fraction(preds, task.query_labels);
  });

  double sum = 0.0;
  for (float a : accuracies) sum += a;
  const double mean = sum / spec.num_tasks;
  double var = 0.0;
  for (float a : accuracies) var += (a - mean) * (a - mean);
  var = spec.num_tasks > 1 ? var / (spec.num_tasks - 1) : 0.0;

  EvalReport report;
  report.way = spec.way;
  report.shot = spec.shot;
  report.num_tasks = spec.num_tasks;
  report.mean_accuracy = mean;
  report.ci95_half_width = 1.96 * std::sqrt(var / spec.num_tasks);
  if (spec.keep_per_task) report.per_task = std::move(accuracies);
  return report;
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json j{{"mode", mode},
                   {"way", way},
                   {"shot", shot},
                   {"num_tasks", num_tasks},
                   {"mean_accuracy", mean_accuracy},
                   {"ci95_half_width", ci95_half_width}};
  if (!per_task.empty()) j["per_task"] = per_task;
  return j;
}

void export_logits(const Model& model, const ParameterSet& tuned_params,
                   const EvalTask& task, int task_id, bool transductive,
                   std::ostream& out) {
  const Tensor logits = model.logits(
      tuned_params, task.query_images,
      ForwardOptions{eval_bn_mode(transductive), 0.0f, nullptr});
  const auto preds = argmax_rows(logits);
  const int C = logits.dim(1);

  out << "task_id,true_class,predicted_class";
  for (int c = 0; c < C; ++c) out << ",logit_" << c;
  out << '\n';
  char buf[64];
  for (int r = 0; r < logits.dim(0); ++r) {
    out << task_id << ',' << task.query_labels[static_cast<std::size_t>(r)] << ','
        << preds[static_cast<std::size_t>(r)];
    for (int c = 0; c < C; ++c) {
      std::snprintf(buf, sizeof(buf), "%.9g",
                    static_cast<double>(logits[static_cast<std::int64_t>(r) * C + c]));
      out << ',' << buf;
    }
    out << '\n';
  }
  if (!out) throw IoError("failed writing logits CSV");
}

}  // namespace dmeta
