#include <doctest.h>

#include <cmath>

#include "dmeta/model.hpp"
#include "dmeta/rng.hpp"

using namespace dmeta;

namespace {

Tensor random_images(int batch, const NetworkSpec& spec, std::uint64_t seed) {
  RngStream rng(seed);
  Tensor t({batch, spec.input_c, spec.input_h, spec.input_w});
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<float>(rng.uniform());
  return t;
}

}  // namespace

TEST_SUITE_BEGIN("model");

TEST_CASE("zero head gives exactly zero logits for any input") {
  const Model model(NetworkSpec::omniglot(5, 8));
  RngStream rng(1);
  const ParameterSet params = model.init_params(rng);
  const Tensor images = random_images(4, model.spec(), 2);
  const Tensor logits =
      model.logits(params, images, ForwardOptions{BnMode::BatchStats, 0.0f, nullptr});
  for (std::int64_t i = 0; i < logits.numel(); ++i) CHECK(logits[i] == 0.0f);
}

TEST_CASE("duplicate images produce identical logit rows") {
  const Model model(NetworkSpec::omniglot(5, 8));
  RngStream rng(3);
  ParameterSet params = model.init_params(rng);
  // give the head some weights so logits are nontrivial
  const int w = params.find("fc.weight");
  for (std::int64_t i = 0; i < params.item(static_cast<std::size_t>(w)).tensor.numel(); ++i) {
    params.item(static_cast<std::size_t>(w)).tensor[i] = static_cast<float>(rng.normal(0, 0.01));
  }
  Tensor images = random_images(3, model.spec(), 4);
  Tensor batch({6, 1, 28, 28});
  std::copy_n(images.ptr(), images.numel(), batch.ptr());
  std::copy_n(images.ptr(), images.numel(), batch.ptr() + images.numel());
  const Tensor logits =
      model.logits(params, batch, ForwardOptions{BnMode::BatchStats, 0.0f, nullptr});
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 5; ++c) {
      CHECK(logits[static_cast<std::int64_t>(r) * 5 + c] ==
            logits[static_cast<std::int64_t>(r + 3) * 5 + c]);
    }
  }
}

TEST_CASE("random params give finite logits of the right shape") {
  const Model model(NetworkSpec::omniglot(5, 8));
  RngStream rng(5);
  const ParameterSet params = model.init_params(rng);
  const Tensor images = random_images(7, model.spec(), 6);
  const Tensor logits =
      model.logits(params, images, ForwardOptions{BnMode::BatchStats, 0.0f, nullptr});
  CHECK(logits.shape == std::vector<int>{7, 5});
  for (std::int64_t i = 0; i < logits.numel(); ++i) CHECK(std::isfinite(logits[i]));
}

TEST_CASE("predict breaks ties toward the lowest index") {
  CHECK(argmax_rows(Tensor::from({1, 3}, {0.1f, 0.9f, 0.3f}))[0] == 1);
  CHECK(argmax_rows(Tensor::from({1, 2}, {0.5f, 0.5f}))[0] == 0);
}

TEST_CASE("predict agrees with argmax over forward logits") {
  const Model model(NetworkSpec::omniglot(5, 8));
  RngStream rng(7);
  ParameterSet params = model.init_params(rng);
  const int w = params.find("fc.weight");
  for (std::int64_t i = 0; i < params.item(static_cast<std::size_t>(w)).tensor.numel(); ++i) {
    params.item(static_cast<std::size_t>(w)).tensor[i] = static_cast<float>(rng.normal(0, 0.02));
  }
  const Tensor images = random_images(9, model.spec(), 8);
  const ForwardOptions opts{BnMode::BatchStats, 0.0f, nullptr};
  CHECK(model.predict(params, images, opts) == argmax_rows(model.logits(params, images, opts)));
}

TEST_CASE("wrong input shape is rejected") {
  const Model model(NetworkSpec::omniglot(5, 8));
  RngStream rng(9);
  const ParameterSet params = model.init_params(rng);
  Tensor bad({2, 1, 14, 14});
  CHECK_THROWS_AS(model.logits(params, bad, ForwardOptions{}), std::invalid_argument);
}

TEST_CASE("mini-imagenet spec: pooled dimensions and smoke forward") {
  const NetworkSpec spec = NetworkSpec::mini_imagenet(5, 8);
  CHECK(spec.feature_h() == 5);  // 84 -> 42 -> 21 -> 10 -> 5
  CHECK(spec.feature_dim() == 8 * 5 * 5);
  const Model model(spec);
  RngStream rng(11);
  const ParameterSet params = model.init_params(rng);
  const Tensor images = random_images(2, spec, 12);
  const Tensor logits =
      model.logits(params, images, ForwardOptions{BnMode::BatchStats, 0.0f, nullptr});
  CHECK(logits.shape == std::vector<int>{2, 5});
  for (std::int64_t i = 0; i < logits.numel(); ++i) CHECK(std::isfinite(logits[i]));
}

TEST_CASE("parameter-set algebra") {
  const Model model(NetworkSpec::omniglot(5, 8));
  RngStream rng(13);
  const ParameterSet a = model.init_params(rng);
  ParameterSet b = a;
  for (std::size_t i = 0; i < b.size(); ++i) {
    for (std::int64_t j = 0; j < b.item(i).tensor.numel(); ++j) {
      b.item(i).tensor[j] += 1.0f;
    }
  }
  SUBCASE("single set with weight one is identical") {
    CHECK(ParameterSet::weighted_mean({&a}, {1.0f}).equals(a));
  }
  SUBCASE("midpoint of zeros and twos is ones") {
    ParameterSet zeros = a, twos = a;
    for (std::size_t i = 0; i < zeros.size(); ++i) {
      zeros.item(i).tensor.fill(0.0f);
      twos.item(i).tensor.fill(2.0f);
    }
    const ParameterSet mid = ParameterSet::weighted_mean({&zeros, &twos}, {0.5f, 0.5f});
    for (std::size_t i = 0; i < mid.size(); ++i) {
      for (std::int64_t j = 0; j < mid.item(i).tensor.numel(); ++j) {
        CHECK(mid.item(i).tensor[j] == 1.0f);
      }
    }
  }
  SUBCASE("interpolate endpoints and quarter point") {
    CHECK(ParameterSet::interpolate(a, b, 0.0f).equals(a));
    CHECK(ParameterSet::interpolate(a, b, 1.0f).equals(b));
    ParameterSet z = a, f = a;
    z.item(0).tensor.fill(0.0f);
    f.item(0).tensor.fill(4.0f);
    CHECK(ParameterSet::interpolate(z, f, 0.25f).item(0).tensor[0] == 1.0f);
  }
  SUBCASE("interpolate equals the two-set weighted mean bit for bit") {
    for (float s : {0.0f, 0.125f, 0.3f, 0.77f, 1.0f}) {
      CHECK(ParameterSet::interpolate(a, b, s).equals(
          ParameterSet::weighted_mean({&a, &b}, {1.0f - s, s})));
    }
  }
  SUBCASE("weight validation") {
    CHECK_THROWS_AS(ParameterSet::weighted_mean({&a, &b}, {0.6f, 0.6f}),
                    std::invalid_argument);
    CHECK_THROWS_AS(ParameterSet::weighted_mean({}, {}), std::invalid_argument);
    CHECK_THROWS_AS(ParameterSet::interpolate(a, b, 1.5f), std::invalid_argument);
  }
}

TEST_SUITE_END();
