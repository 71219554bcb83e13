#include <doctest.h>

#include <cmath>
#include <sstream>

#include "dmeta/dataset.hpp"
#include "dmeta/evaluate.hpp"
#include "dmeta/inner_loop.hpp"
#include "dmeta/samplers.hpp"

using namespace dmeta;

namespace {

struct EvalFixture {
  Model model{NetworkSpec::omniglot(5, 8)};
  Dataset eval_split = synth_glyph_pair(6, 10, 10, 71).evaluation;
  ParameterSet params;
  EvalFixture() {
    RngStream rng(2);
    params = model.init_params(rng);
  }
};

}  // namespace

TEST_SUITE_BEGIN("evaluate");

TEST_CASE("zero-head model without fine-tuning scores exactly 1/N") {
  EvalFixture f;
  EvalSpec spec;
  spec.num_tasks = 20;
  spec.fine_tune.steps = 0;
  const EvalReport report = evaluate(f.model, f.params, f.eval_split, spec, 5);
  CHECK(report.mean_accuracy == doctest::Approx(0.2).epsilon(1e-6));
  CHECK(report.ci95_half_width == doctest::Approx(0.0));
}

TEST_CASE("fine_tune with zero steps only re-zeroes the head") {
  EvalFixture f;
  RngStream rng(3);
  // give the head nonzero weights first
  ParameterSet dirty = f.params;
  for (std::size_t i = 0; i < dirty.size(); ++i) {
    if (dirty.item(i).head) dirty.item(i).tensor.fill(0.5f);
  }
  RngStream task_rng(4);
  const EvalTask task = sample_class_task(f.eval_split, 5, 5, 1, task_rng);
  FineTuneConfig cfg;
  cfg.steps = 0;
  const ParameterSet tuned = fine_tune(f.model, dirty, task, cfg);
  CHECK(tuned.body_equals(dirty));
  for (std::size_t i = 0; i < tuned.size(); ++i) {
    if (!tuned.item(i).head) continue;
    for (std::int64_t j = 0; j < tuned.item(i).tensor.numel(); ++j) {
      CHECK(tuned.item(i).tensor[j] == 0.0f);
    }
  }
}

TEST_CASE("fine-tuning fits a separable synthetic task's support set") {
  EvalFixture f;
  RngStream task_rng(9);
  const EvalTask task = sample_class_task(f.eval_split, 5, 5, 1, task_rng);
  FineTuneConfig cfg;  // 50 steps
  const ParameterSet tuned = fine_tune(f.model, f.params, task, cfg);
  const auto preds = f.model.predict(tuned, task.support_images,
                                     ForwardOptions{BnMode::BatchStats, 0.0f, nullptr});
  CHECK(match_fraction(preds, task.support_labels) == 1.0f);
}

TEST_CASE("head width must match the task way") {
  EvalFixture f;
  RngStream task_rng(5);
  const EvalTask task = sample_class_task(f.eval_split, 3, 2, 1, task_rng);
  CHECK_THROWS_AS(fine_tune(f.model, f.params, task, FineTuneConfig{}),
                  std::invalid_argument);
}

TEST_CASE("evaluation is deterministic and leaves the input parameters alone") {
  EvalFixture f;
  const ParameterSet before = f.params;
  EvalSpec spec;
  spec.num_tasks = 6;
  spec.fine_tune.steps = 4;
  const EvalReport a = evaluate(f.model, f.params, f.eval_split, spec, 17);
  const EvalReport b = evaluate(f.model, f.params, f.eval_split, spec, 17);
  CHECK(f.params.equals(before));
  CHECK(a.mean_accuracy == b.mean_accuracy);
  CHECK(a.ci95_half_width == b.ci95_half_width);
  spec.workers = 3;
  const EvalReport c = evaluate(f.model, f.params, f.eval_split, spec, 17);
  CHECK(a.mean_accuracy == c.mean_accuracy);
}

TEST_CASE("report mean equals the mean of the per-task dump") {
  EvalFixture f;
  EvalSpec spec;
  spec.num_tasks = 8;
  spec.fine_tune.steps = 3;
  spec.keep_per_task = true;
  const EvalReport report = evaluate(f.model, f.params, f.eval_split, spec, 23);
  REQUIRE(report.per_task.size() == 8);
  double mean = 0;
  for (float a : report.per_task) mean += a;
  mean /= 8;
  CHECK(report.mean_accuracy == doctest::Approx(mean).epsilon(1e-9));
}

TEST_CASE("accuracy is invariant to permuting the task-local labels") {
  EvalFixture f;
  const int perm[5] = {3, 1, 4, 0, 2};
  for (std::uint64_t s = 0; s < 10; ++s) {
    RngStream task_rng(100 + s);
    EvalTask task = sample_class_task(f.eval_split, 5, 3, 1, task_rng);
    EvalTask permuted = task;
    for (auto& l : permuted.support_labels) l = perm[l];
    for (auto& l : permuted.query_labels) l = perm[l];
    FineTuneConfig cfg;
    cfg.steps = 10;
    const ParameterSet tuned_a = fine_tune(f.model, f.params, task, cfg);
    const ParameterSet tuned_b = fine_tune(f.model, f.params, permuted, cfg);
    const ForwardOptions opts{BnMode::BatchStats, 0.0f, nullptr};
    const float acc_a = match_fraction(f.model.predict(tuned_a, task.query_images, opts),
                                       task.query_labels);
    const float acc_b = match_fraction(f.model.predict(tuned_b, permuted.query_images, opts),
                                       permuted.query_labels);
    CHECK(acc_a == acc_b);
  }
}

TEST_CASE("confidence interval shrinks like one over sqrt tasks") {
  Model model(NetworkSpec::omniglot(5, 4));
  RngStream rng(6);
  const ParameterSet params = model.init_params(rng);
  const Dataset eval_split = synth_glyph_pair(6, 12, 12, 73).evaluation;
  EvalSpec small, large;
  small.num_tasks = 100;
  large.num_tasks = 400;
  small.shot = large.shot = 1;
  small.fine_tune.steps = large.fine_tune.steps = 8;
  const EvalReport a = evaluate(model, params, eval_split, small, 31);
  const EvalReport b = evaluate(model, params, eval_split, large, 31);
  REQUIRE(b.ci95_half_width > 0.0);
  const double ratio = a.ci95_half_width / b.ci95_half_width;
  CHECK(ratio > 1.8);
  CHECK(ratio < 2.2);
}

TEST_CASE("export_logits emits consistent CSV") {
  EvalFixture f;
  RngStream task_rng(41);
  const EvalTask task = sample_class_task(f.eval_split, 5, 2, 2, task_rng);
  FineTuneConfig cfg;
  cfg.steps = 5;
  const ParameterSet tuned = fine_tune(f.model, f.params, task, cfg);
  std::ostringstream out;
  export_logits(f.model, tuned, task, 3, true, out);

  std::istringstream in(out.str());
  std::string header;
  REQUIRE(std::getline(in, header));
  CHECK(header == "task_id,true_class,predicted_class,logit_0,logit_1,logit_2,logit_3,logit_4");

  const Tensor logits = f.model.logits(tuned, task.query_images,
                                       ForwardOptions{BnMode::BatchStats, 0.0f, nullptr});
  int rows = 0;
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    REQUIRE(cells.size() == 8);
    CHECK(cells[0] == "3");
    CHECK(std::stoi(cells[1]) == task.query_labels[static_cast<std::size_t>(rows)]);
    int argmax = 0;
    double best = -1e30;
    for (int c = 0; c < 5; ++c) {
      const double v = std::stod(cells[static_cast<std::size_t>(3 + c)]);
      CHECK(std::abs(v - logits[static_cast<std::int64_t>(rows) * 5 + c]) < 1e-6);
      if (v > best) {
        best = v;
        argmax = c;
      }
    }
    CHECK(std::stoi(cells[2]) == argmax);
    ++rows;
  }
  CHECK(rows == 10);  // N*Q = 5*2
}

TEST_SUITE_END();
