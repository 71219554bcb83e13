#include "dmeta/meta_loop.hpp"

#include <chrono>
#include <stdexcept>

#include "dmeta/parallel.hpp"
#include "dmeta/samplers.hpp"

namespace dmeta {

MetaMode parse_meta_mode(const std::string& name) {
  if (name == "divergent-qd") return MetaMode::DivergentQd;
  if (name == "divergent-only") return MetaMode::DivergentOnly;
  if (name == "supervised") return MetaMode::Supervised;
  if (name == "umtra-low-aug") return MetaMode::UmtraLowAug;
  if (name == "fixed-random-labels") return MetaMode::FixedRandomLabels;
  if (name == "random-search") return MetaMode::RandomSearch;
  if (name == "none") return MetaMode::None;
  throw std::invalid_argument("unknown pretraining mode: " + name);
}

std::string to_string(MetaMode mode) {
  switch (mode) {
    case MetaMode::DivergentQd: return "divergent-qd";
    case MetaMode::DivergentOnly: return "divergent-only";
    case MetaMode::Supervised: return "supervised";
    case MetaMode::UmtraLowAug: return "umtra-low-aug";
    case MetaMode::FixedRandomLabels: return "fixed-random-labels";
    case MetaMode::RandomSearch: return "random-search";
    case MetaMode::None: return "none";
  }
  throw std::invalid_argument("unhandled mode");
}

void MetaConfig::validate() const {
  if (meta_iterations < 0) throw std::invalid_argument("meta: iterations must be >= 0");
  if (tasks_per_step < 1) throw std::invalid_argument("meta: tasks_per_step must be >= 1");
  auto in_unit = [](float v) { return v >= 0.0f && v <= 1.0f; };
  if (!in_unit(meta_step_start) || !in_unit(meta_step_end)) {
    throw std::invalid_argument("meta: step sizes must be in [0,1]");
  }
  if (workers < 1) throw std::invalid_argument("meta: workers must be >= 1");
  if (ambiguous_batch_size < 1 || pseudo_task_size < 1) {
    throw std::invalid_argument("meta: batch sizes must be >= 1");
  }
  if (supervised_shots < 1 || umtra_variants < 1) {
    throw std::invalid_argument("meta: shots/variants must be >= 1");
  }
}

bool apply_meta_step(MetaState& state, const std::vector<ParameterSet>& learners,
                     const std::vector<float>& values, float step_size) {
  if (learners.empty()) return false;
  if (learners.size() != values.size()) {
    throw std::invalid_argument("meta_step: value count mismatch");
  }
  double total = 0.0;
  for (float v : values) {
    if (!(v > 0.0f)) throw std::invalid_argument("meta_step: values must be positive");
    total += v;
  }
  std::vector<float> weights(values.size());
  std::vector<const ParameterSet*> ptrs(learners.size());
  // normalize in double, then snap the last weight so the sum is exact
  double acc = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    weights[i] = static_cast<float>(values[i] / total);
    acc += weights[i];
    ptrs[i] = &learners[i];
  }
  weights.back() += static_cast<float>(1.0 - acc);
  const ParameterSet mean = ParameterSet::weighted_mean(ptrs, weights);
  state.params = ParameterSet::interpolate(state.params, mean, step_size);
  return true;
}

namespace {

struct TaskResult {
  std::optional<ParameterSet> learner;
  float weight = 1.0f;
  nlohmann::json inner_row;
  bool has_record = false;
  float value = 0.0f;
  bool accepted = false;
};

nlohmann::json record_to_json(const BehaviorRecord& r) {
  nlohmann::json row{
      {"seed", r.rng_origin},
      {"sigma_final", r.sigma_final},
      {"accepted", r.accepted},
      {"degenerate", r.degenerate},
  };
  if (r.degenerate) {
    row["a_novelty"] = nullptr;
    row["a_robustness"] = nullptr;
    row["value"] = nullptr;
  } else {
    row["a_novelty"] = r.a_novelty;
    row["a_robustness"] = r.a_robustness;
    row["value"] = r.value;
  }
  return row;
}

}  // namespace

ParameterSet run_pretraining(const Model& model, const Dataset& pretraining,
                             const MetaConfig& config, const InnerLoopConfig& inner,
                             const MetaHooks* hooks) {
  config.validate();
  inner.validate();
  const int C = model.spec().num_logits;
  const RngStream master(config.seed);

  MetaState state{model.init_params(RngStream::from_label(config.seed, "init")),
                  0, 0, 0};
  if (config.mode == MetaMode::None) return state.params;

  // fixed-random-labels: one permanent label per image, drawn at startup
  std::vector<int> fixed_labels;
  if (config.mode == MetaMode::FixedRandomLabels) {
    RngStream label_rng = master.derive("fixed_labels");
    fixed_labels.resize(static_cast<std::size_t>(pretraining.num_images()));
    for (auto& l : fixed_labels) l = static_cast<int>(label_rng.uniform_int(C));
  }

  const int n = config.tasks_per_step;
  const int T = config.meta_iterations;
  for (int iter = 0; iter < T; ++iter) {
    const auto started = std::chrono::steady_clock::now();
    const float frac = static_cast<float>(iter) / static_cast<float>(T);
    const float step_size =
        config.meta_step_start + (config.meta_step_end - config.meta_step_start) * frac;

    // sample all task batches serially so draws are independent of workers
    std::vector<TaskBatch> batches(static_cast<std::size_t>(n));
    std::vector<RngStream> streams;
    streams.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      RngStream task_rng = master.derive("iter", iter).derive("task", i);
      streams.push_back(task_rng);
      RngStream sample_rng = task_rng.derive("sample");
      switch (config.mode) {
        case MetaMode::DivergentQd:
        case MetaMode::DivergentOnly:
          batches[static_cast<std::size_t>(i)] =
              sample_ambiguous_batch(pretraining, config.ambiguous_batch_size, sample_rng);
          break;
        case MetaMode::Supervised: {
          EvalTask task = sample_class_task(pretraining, C, config.supervised_shots,
                                            0, sample_rng);
          batches[static_cast<std::size_t>(i)] =
              TaskBatch{std::move(task.support_images), std::move(task.support_labels),
                        "class"};
          break;
        }
        case MetaMode::UmtraLowAug:
          batches[static_cast<std::size_t>(i)] =
              sample_umtra_task(pretraining, C, config.umtra_variants, sample_rng);
          break;
        case MetaMode::FixedRandomLabels:
        case MetaMode::RandomSearch: {
          if (config.pseudo_task_size > pretraining.num_images()) {
            throw std::invalid_argument("meta: pseudo_task_size exceeds the dataset");
          }
          const auto picks = sample_rng.sample_without_replacement(
              pretraining.num_images(), config.pseudo_task_size);
          std::vector<int> ids(picks.begin(), picks.end());
          TaskBatch b;
          b.images = gather_images(pretraining, ids);
          if (config.mode == MetaMode::FixedRandomLabels) {
            b.provenance = "fixed-random";
            for (int id : ids) b.labels.push_back(fixed_labels[static_cast<std::size_t>(id)]);
          } else {
            b.provenance = "random-search";
            RngStream label_rng = task_rng.derive("labels");
            for (std::size_t p = 0; p < ids.size(); ++p) {
              b.labels.push_back(static_cast<int>(label_rng.uniform_int(C)));
            }
          }
          batches[static_cast<std::size_t>(i)] = std::move(b);
          break;
        }
        case MetaMode::None: break;
      }
    }

    std::vector<TaskResult> results(static_cast<std::size_t>(n));
    parallel_for(n, config.workers, [&](std::int64_t i) {
      const TaskBatch& batch = batches[static_cast<std::size_t>(i)];
      TaskResult& out = results[static_cast<std::size_t>(i)];
      RngStream inner_rng = streams[static_cast<std::size_t>(i)].derive("inner");
      switch (config.mode) {
        case MetaMode::DivergentQd:
        case MetaMode::DivergentOnly: {
          const bool train_all = config.mode == MetaMode::DivergentOnly;
          InnerOutcome outcome =
              (hooks && hooks->inner_override)
                  ? hooks->inner_override(static_cast<int>(i), batch, inner_rng)
                  : run_inner(model, state.params, batch, inner, inner_rng, train_all);
          out.has_record = true;
          out.value = outcome.record.value;
          out.accepted = outcome.record.accepted;
          out.inner_row = record_to_json(outcome.record);
          if (outcome.learner) {
            out.learner = std::move(outcome.learner);
            // value weight for qd; uniform for the diversity-only ablation
            out.weight = train_all ? 1.0f : outcome.record.value;
          }
          break;
        }
        case MetaMode::Supervised:
        case MetaMode::UmtraLowAug:
        case MetaMode::FixedRandomLabels:
        case MetaMode::RandomSearch: {
          out.learner = train_on_labels(model, state.params, batch.images, batch.labels,
                                        inner.learner_steps, inner.learner_lr,
                                        inner.learner_minibatch, nullptr);
          out.weight = 1.0f;
          break;
        }
        case MetaMode::None: break;
      }
    });

    std::vector<ParameterSet> learners;
    std::vector<float> weights;
    int accepted_count = 0;
    double value_sum = 0.0;
    int value_count = 0;
    for (int i = 0; i < n; ++i) {
      TaskResult& r = results[static_cast<std::size_t>(i)];
      if (r.has_record) {
        if (r.inner_row.contains("value") && !r.inner_row["value"].is_null()) {
          value_sum += r.value;
          ++value_count;
        }
        if (r.accepted) {
          ++state.accepted;
        } else {
          ++state.discarded;
        }
        r.inner_row["iteration"] = iter;
        r.inner_row["task"] = i;
        if (hooks && hooks->on_inner_row) hooks->on_inner_row(r.inner_row);
      }
      if (r.learner) {
        learners.push_back(std::move(*r.learner));
        weights.push_back(r.weight);
        ++accepted_count;
      }
    }

    apply_meta_step(state, learners, weights, step_size);
    state.iteration = iter + 1;

    if (hooks && hooks->on_meta_row) {
      const auto elapsed = std::chrono::duration<double, std::milli>(
          std::chrono::steady_clock::now() - started);
      nlohmann::json row{{"iteration", iter},
                         {"mode", to_string(config.mode)},
                         {"accepted_count", accepted_count},
                         {"step_size", step_size},
                         {"wall_ms", elapsed.count()}};
      if (value_count > 0) {
        row["mean_V"] = value_sum / value_count;
      } else {
        row["mean_V"] = nullptr;
      }
      hooks->on_meta_row(row);
    }
    if (hooks && hooks->on_checkpoint && config.checkpoint_every > 0 &&
        (iter + 1) % config.checkpoint_every == 0) {
      hooks->on_checkpoint(iter + 1, state.params);
    }
  }
  return state.params;
}

}  // namespace dmeta
