#include <benchmark/benchmark.h>

#include "dmeta/adam.hpp"
#include "dmeta/augment.hpp"
#include "dmeta/dataset.hpp"
#include "dmeta/inner_loop.hpp"
#include "dmeta/model.hpp"
#include "dmeta/samplers.hpp"
#include "dmeta/tape.hpp"

namespace {

using namespace dmeta;

Tensor random_images(int batch, const NetworkSpec& spec, std::uint64_t seed) {
  RngStream rng(seed);
  Tensor t({batch, spec.input_c, spec.input_h, spec.input_w});
  for (std::int64_t i = 0; i < t.numel(); ++i) {
    t[i] = static_cast<float>(rng.uniform());
  }
  return t;
}

void BM_ForwardOmniglot(benchmark::State& state) {
  const NetworkSpec spec = NetworkSpec::omniglot(5, static_cast<int>(state.range(0)));
  const Model model(spec);
  RngStream rng(1);
  const ParameterSet params = model.init_params(rng);
  const Tensor images = random_images(static_cast<int>(state.range(1)), spec, 2);
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        model.logits(params, images, ForwardOptions{BnMode::BatchStats, 0.0f, nullptr}));
  }
}
BENCHMARK(BM_ForwardOmniglot)->Args({64, 25})->Args({64, 90})->Args({16, 90});

void BM_TrainStepOmniglot(benchmark::State& state) {
  const NetworkSpec spec = NetworkSpec::omniglot(5, static_cast<int>(state.range(0)));
  const Model model(spec);
  RngStream rng(1);
  ParameterSet params = model.init_params(rng);
  const int batch = static_cast<int>(state.range(1));
  const Tensor images = random_images(batch, spec, 2);
  std::vector<int> labels(static_cast<std::size_t>(batch));
  for (int i = 0; i < batch; ++i) labels[static_cast<std::size_t>(i)] = i % 5;
  AdamState adam(params, AdamConfig{}, TrainScope::All);
  const Tensor targets = one_hot(labels, 5);
  for (auto _ : state) {
    TapeF tape;
    Model::Graph g = model.build(tape, params, images,
                                 ForwardOptions{BnMode::Train, 0.0f, nullptr},
                                 TrainScope::All);
    const int loss = tape.cross_entropy(tape.softmax(g.logits), targets);
    tape.backward(loss);
    adam.step(params, model.gather_grads(tape, g));
  }
}
BENCHMARK(BM_TrainStepOmniglot)->Args({64, 25})->Args({16, 90});

void BM_InnerLoop(benchmark::State& state) {
  const NetworkSpec spec = NetworkSpec::omniglot(5, static_cast<int>(state.range(0)));
  const Model model(spec);
  RngStream rng(1);
  const ParameterSet params = model.init_params(rng);
  const Dataset data = synth_glyphs(20, 20, 7);
  RngStream sample_rng(3);
  const TaskBatch batch =
      sample_ambiguous_batch(data, static_cast<int>(state.range(1)), sample_rng);
  InnerLoopConfig cfg;
  std::uint64_t seed = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        run_inner(model, params, batch, cfg, RngStream(seed++), false));
  }
}
BENCHMARK(BM_InnerLoop)->Args({16, 90})->Unit(benchmark::kMillisecond);

void BM_Augment(benchmark::State& state) {
  const Dataset data = synth_glyphs(4, 4, 5);
  const Tensor img = data.image(0);
  RngStream rng(11);
  for (auto _ : state) {
    benchmark::DoNotOptimize(augment(img, rng));
  }
}
BENCHMARK(BM_Augment);

void BM_SynthGlyphs(benchmark::State& state) {
  std::uint64_t seed = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(synth_glyphs(50, 20, seed++));
  }
}
BENCHMARK(BM_SynthGlyphs)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
