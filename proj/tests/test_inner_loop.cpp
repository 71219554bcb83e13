#include <doctest.h>

#include <cmath>

#include "dmeta/dataset.hpp"
#include "dmeta/inner_loop.hpp"
#include "dmeta/samplers.hpp"
#include "dmeta/tape.hpp"

using namespace dmeta;

namespace {

// small fixture shared by the inner-loop tests
struct Fixture {
  Model model{NetworkSpec::omniglot(5, 8)};
  Dataset data = synth_glyphs(16, 10, 31);
  ParameterSet meta;
  Fixture() {
    RngStream rng(1);
    meta = model.init_params(rng);
  }
  TaskBatch batch(int size, std::uint64_t seed) const {
    RngStream rng(seed);
    return sample_ambiguous_batch(data, size, rng);
  }
  ParameterSet randomized_head(std::uint64_t seed, double scale) const {
    ParameterSet p = meta;
    RngStream rng(seed);
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (!p.item(i).head) continue;
      Tensor& t = p.item(i).tensor;
      for (std::int64_t j = 0; j < t.numel(); ++j) {
        t[j] = static_cast<float>(rng.normal(0.0, scale));
      }
    }
    return p;
  }
};

double compute_js(const Model& model, const ParameterSet& a, const ParameterSet& b,
                  const Tensor& images) {
  const ForwardOptions opts{BnMode::BatchStats, 0.0f, nullptr};
  TapeF tape;
  const int p = tape.softmax(tape.constant(model.logits(a, images, opts)));
  const int q = tape.softmax(tape.constant(model.logits(b, images, opts)));
  return tape.value(tape.js_divergence(p, q))[0];
}

}  // namespace

TEST_SUITE_BEGIN("inner_loop");

TEST_CASE("probe gradients: hand-computed linear model") {
  // logit = w * x over batch {1, 3}: mean |d logit/d w| = 2
  TapeF tape;
  tape.set_abs_param_grads(true);
  const int x = tape.constant(Tensor::from({2, 1}, {1.0f, 3.0f}));
  const int w = tape.leaf(Tensor::from({1, 1}, {0.37f}), true);
  const int b = tape.leaf(Tensor({1}), true);
  const int logits = tape.fully_connected(x, w, b);
  Tensor seed({2, 1}, 0.5f);  // 1/B per sample, single logit
  tape.backward_seed(logits, seed);
  const float g = tape.grad(w)[0];
  CHECK(g == doctest::Approx(2.0));
  // s = 1/(eps + g)
  CHECK(1.0f / (1e-6f + g) == doctest::Approx(1.0 / 2.000001));
}

TEST_CASE("safe_mutation_scales on the real model") {
  Fixture f;
  const TaskBatch batch = f.batch(12, 2);
  const auto scales = safe_mutation_scales(f.model, f.meta, batch.images);
  REQUIRE(scales.size() == f.meta.size());
  for (std::size_t i = 0; i < scales.size(); ++i) {
    if (!f.meta.item(i).trainable) {
      CHECK(scales[i].data.empty());
      continue;
    }
    REQUIRE(scales[i].shape == f.meta.item(i).tensor.shape);
    for (std::int64_t j = 0; j < scales[i].numel(); ++j) {
      CHECK(scales[i][j] > 0.0f);
      CHECK(std::isfinite(scales[i][j]));
    }
  }
  SUBCASE("zero-sensitivity weights get the maximal scale") {
    // the zero head makes logits identically zero, so conv parameters see
    // zero gradient and their scale saturates at 1/eps
    const int conv0 = f.meta.find("conv0.weight");
    bool any_max = false;
    for (std::int64_t j = 0; j < scales[static_cast<std::size_t>(conv0)].numel(); ++j) {
      if (scales[static_cast<std::size_t>(conv0)][j] == doctest::Approx(1e6).epsilon(1e-3)) {
        any_max = true;
        break;
      }
    }
    CHECK(any_max);
  }
  SUBCASE("monotonicity: larger sensitivity, smaller scale") {
    // head weight scales: feature with larger mean activation gets more
    // gradient and hence a smaller scale
    const int fcw = f.meta.find("fc.weight");
    const Tensor& s = scales[static_cast<std::size_t>(fcw)];
    float mn = s[0], mx = s[0];
    for (std::int64_t j = 0; j < s.numel(); ++j) {
      mn = std::min(mn, s[j]);
      mx = std::max(mx, s[j]);
    }
    CHECK(mn < mx);  // sensitivities differ across features
  }
  SUBCASE("per-layer normalization yields unit means") {
    auto copy = scales;
    normalize_scales_per_layer(copy);
    for (const auto& s : copy) {
      if (s.data.empty()) continue;
      double mean = 0.0;
      for (std::int64_t j = 0; j < s.numel(); ++j) mean += s[j];
      mean /= static_cast<double>(s.numel());
      CHECK(mean == doctest::Approx(1.0).epsilon(1e-4));
    }
  }
}

TEST_CASE("inject_noise finds a behavior change and reports the sigma ladder") {
  Fixture f;
  const TaskBatch batch = f.batch(12, 3);
  auto scales = safe_mutation_scales(f.model, f.meta, batch.images);
  normalize_scales_per_layer(scales);
  InnerLoopConfig cfg;
  const NoiseResult result =
      inject_noise(f.model, f.meta, scales, batch.images, cfg, RngStream(5));
  REQUIRE_FALSE(result.degenerate);
  CHECK(result.pred_diff >= 1);
  const auto base = f.model.predict(f.meta, batch.images,
                                    ForwardOptions{BnMode::BatchStats, 0.0f, nullptr});
  const auto mutated = f.model.predict(result.teacher, batch.images,
                                       ForwardOptions{BnMode::BatchStats, 0.0f, nullptr});
  CHECK(base != mutated);
  // sigma is sigma_init * growth^k (or the cap)
  bool on_ladder = result.sigma_final == cfg.sigma_cap;
  for (double s = cfg.sigma_init; s <= cfg.sigma_cap * 1.0001; s *= cfg.sigma_growth) {
    if (result.sigma_final == doctest::Approx(s).epsilon(1e-6)) on_ladder = true;
  }
  CHECK(on_ladder);
}

TEST_CASE("inject_noise with all-zero scales degenerates at the cap") {
  Fixture f;
  const TaskBatch batch = f.batch(8, 4);
  std::vector<Tensor> zero_scales(f.meta.size());
  for (std::size_t i = 0; i < f.meta.size(); ++i) {
    if (f.meta.item(i).trainable) zero_scales[i] = Tensor(f.meta.item(i).tensor.shape);
  }
  InnerLoopConfig cfg;
  const NoiseResult result =
      inject_noise(f.model, f.meta, zero_scales, batch.images, cfg, RngStream(6));
  CHECK(result.degenerate);
  CHECK(result.sigma_final == cfg.sigma_cap);
  CHECK(result.pred_diff == 0);
}

TEST_CASE("joint_optimize: reachable behavior is caught by the index") {
  Fixture f;
  const TaskBatch batch = f.batch(20, 7);
  // archive with a trained-looking random head; teacher = same body with
  // permuted head columns, i.e. a behavior the index can reach exactly
  const ParameterSet archive = f.randomized_head(11, 0.05);
  ParameterSet teacher = archive;
  const int fcw = teacher.find("fc.weight");
  const int fcb = teacher.find("fc.bias");
  Tensor& w = teacher.item(static_cast<std::size_t>(fcw)).tensor;
  Tensor& b = teacher.item(static_cast<std::size_t>(fcb)).tensor;
  const int D = w.dim(0), C = w.dim(1);
  const Tensor w_orig = w;
  const Tensor b_orig = b;
  const int perm[5] = {2, 0, 4, 1, 3};
  for (int d = 0; d < D; ++d) {
    for (int c = 0; c < C; ++c) {
      w[static_cast<std::int64_t>(d) * C + c] =
          w_orig[static_cast<std::int64_t>(d) * C + perm[c]];
    }
  }
  for (int c = 0; c < C; ++c) b[c] = b_orig[perm[c]];

  InnerLoopConfig cfg;
  const JointResult result =
      joint_optimize(f.model, archive, teacher, batch.images, cfg, RngStream(8));
  CHECK(result.a_novelty >= 0.9f);
  SUBCASE("archive body is untouched by the joint optimization") {
    CHECK(result.index.body_equals(archive));
  }
}

TEST_CASE("joint_optimize raises the divergence from the archive") {
  // JS(archive, teacher) after the rounds >= before, in >= 80% of seeds
  Fixture f;
  InnerLoopConfig cfg;
  int improved = 0;
  const int trials = 50;
  for (int t = 0; t < trials; ++t) {
    const TaskBatch batch = f.batch(16, 100 + static_cast<std::uint64_t>(t));
    RngStream rng(200 + static_cast<std::uint64_t>(t));
    auto scales = safe_mutation_scales(f.model, f.meta, batch.images);
    normalize_scales_per_layer(scales);
    const NoiseResult noise =
        inject_noise(f.model, f.meta, scales, batch.images, cfg, rng.derive("noise"));
    REQUIRE_FALSE(noise.degenerate);
    const double js_before = compute_js(f.model, f.meta, noise.teacher, batch.images);
    const JointResult joint = joint_optimize(f.model, f.meta, noise.teacher,
                                             batch.images, cfg, rng.derive("dropout"));
    const double js_after = compute_js(f.model, joint.index, joint.teacher, batch.images);
    if (js_after >= js_before) ++improved;
  }
  CHECK(improved >= 40);
}

TEST_CASE("noise-dominated teacher scores near-chance robustness") {
  Fixture f;
  const TaskBatch batch = f.batch(20, 9);
  InnerLoopConfig cfg;
  cfg.teacher_lr = 0.0f;  // freeze the constructed teacher
  double total = 0.0;
  const int trials = 3;
  for (int t = 0; t < trials; ++t) {
    // head magnitudes far below the dropout-induced fluctuations: the
    // noisy predictions are fresh noise every round
    const ParameterSet teacher = f.randomized_head(300 + static_cast<std::uint64_t>(t), 1e-4);
    const JointResult result = joint_optimize(f.model, f.meta, teacher, batch.images,
                                              cfg, RngStream(400 + static_cast<std::uint64_t>(t)));
    total += result.a_robustness;
  }
  CHECK(total / trials <= 0.45);  // chance is 1/C = 0.2
}

TEST_CASE("train_learner") {
  Fixture f;
  const TaskBatch batch = f.batch(20, 10);
  SUBCASE("identical teacher and zero learning rate keep the meta parameters") {
    InnerLoopConfig cfg;
    cfg.learner_lr = 0.0f;
    const ParameterSet learner = train_learner(f.model, f.meta, f.meta, batch.images, cfg);
    CHECK(learner.equals(f.meta));
  }
  SUBCASE("training improves agreement with the teacher") {
    InnerLoopConfig cfg;
    const ParameterSet teacher = f.randomized_head(21, 0.05);
    const ForwardOptions opts{BnMode::BatchStats, 0.0f, nullptr};
    const auto targets = f.model.predict(teacher, batch.images, opts);
    const float before =
        match_fraction(f.model.predict(f.meta, batch.images, opts), targets);
    const ParameterSet learner = train_learner(f.model, f.meta, teacher, batch.images, cfg);
    const float after =
        match_fraction(f.model.predict(learner, batch.images, opts), targets);
    CHECK(after >= before);
    CHECK(after > 0.5f);
  }
  SUBCASE("one-image batch converges to the teacher's prediction") {
    InnerLoopConfig cfg;
    const ParameterSet teacher = f.randomized_head(22, 0.05);
    Tensor single({1, 1, 28, 28});
    std::copy_n(batch.images.ptr(), single.numel(), single.ptr());
    const ForwardOptions opts{BnMode::BatchStats, 0.0f, nullptr};
    const auto target = f.model.predict(teacher, single, opts);
    const ParameterSet learner = train_learner(f.model, f.meta, teacher, single, cfg);
    CHECK(f.model.predict(learner, single, opts) == target);
  }
}

TEST_CASE("run_inner semantics over seeds") {
  Fixture f;
  InnerLoopConfig cfg;
  int accepted = 0, rejected = 0;
  for (std::uint64_t s = 0; s < 12; ++s) {
    const TaskBatch batch = f.batch(20, 500 + s);
    const InnerOutcome outcome = run_inner(f.model, f.meta, batch, cfg, RngStream(600 + s));
    if (outcome.record.degenerate) continue;
    CHECK(outcome.record.initial_pred_diff >= 1);
    CHECK(outcome.record.value ==
          doctest::Approx(outcome.record.a_robustness - outcome.record.a_novelty));
    CHECK(outcome.record.accepted == (outcome.record.value > 0.0f));
    CHECK(outcome.learner.has_value() == outcome.record.accepted);
    if (outcome.record.accepted) {
      ++accepted;
      CHECK(outcome.record.a_robustness > outcome.record.a_novelty);
      // the novelty estimate is stable under a fresh head refit
      const float refit = index_fit_accuracy(f.model, f.meta,
                                             outcome.record.teacher_predictions,
                                             batch.images, cfg);
      CHECK(std::abs(refit - outcome.record.a_novelty) <= 2.0f / 20.0f + 1e-6f);
    } else {
      ++rejected;
    }
  }
  INFO("accepted=", accepted, " rejected=", rejected);
  CHECK(accepted + rejected > 0);
}

TEST_CASE("run_inner is deterministic and ignores labels") {
  Fixture f;
  InnerLoopConfig cfg;
  TaskBatch batch = f.batch(16, 99);
  const InnerOutcome a = run_inner(f.model, f.meta, batch, cfg, RngStream(7777));
  const InnerOutcome b = run_inner(f.model, f.meta, batch, cfg, RngStream(7777));
  CHECK(a.record.sigma_final == b.record.sigma_final);
  CHECK(a.record.a_novelty == b.record.a_novelty);
  CHECK(a.record.a_robustness == b.record.a_robustness);
  CHECK(a.record.teacher_predictions == b.record.teacher_predictions);
  REQUIRE(a.learner.has_value() == b.learner.has_value());
  if (a.learner) CHECK(a.learner->equals(*b.learner));

  // ground-truth labels play no role in the divergent search
  TaskBatch labelled = batch;
  labelled.labels.assign(static_cast<std::size_t>(batch.images.dim(0)), 3);
  const InnerOutcome c = run_inner(f.model, f.meta, labelled, cfg, RngStream(7777));
  CHECK(c.record.teacher_predictions == a.record.teacher_predictions);
  CHECK(c.record.a_novelty == a.record.a_novelty);
  if (a.learner && c.learner) CHECK(c.learner->equals(*a.learner));
}

TEST_CASE("divergent-only flag trains a learner for negative-value behaviors") {
  Fixture f;
  InnerLoopConfig cfg;
  for (std::uint64_t s = 0; s < 20; ++s) {
    const TaskBatch batch = f.batch(16, 800 + s);
    const InnerOutcome outcome =
        run_inner(f.model, f.meta, batch, cfg, RngStream(900 + s), /*train_all_found=*/true);
    if (outcome.record.degenerate) continue;
    CHECK(outcome.learner.has_value());
    if (!outcome.record.accepted) return;  // found the interesting case
  }
  WARN("no negative-value behavior appeared in 20 seeds");
}

TEST_SUITE_END();
