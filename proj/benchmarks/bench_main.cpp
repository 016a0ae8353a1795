#include <benchmark/benchmark.h>

#include "steerkit/evalkit.hpp"
#include "steerkit/forge.hpp"
#include "steerkit/stats.hpp"
#include "steerkit/steer.hpp"
#include "steerkit/vlm.hpp"

using namespace steerkit;

namespace {

struct Setup {
  SyntheticWorld world = SyntheticWorld::standard();
  ToyVLM model;
  SteeringModuleParams params;
  SteeringContext context;
  Tensor image;

  Setup() {
    Rng rng(1);
    model = ToyVLM::initialize(ModelConfig{}, rng);
    model.set_frozen(true);
    params = SteeringModuleParams::initialize(SteerConfig::for_model(model.config()), rng);
    for (Tensor* t : {&params.steerer_up, &params.gate_up})
      for (auto& v : t->mutable_data()) v = rng.uniform(-0.05, 0.05);
    const auto pair = gen_prompt_pairs(world, 1, 3).front();
    context = cache_prompt_activations(model, prompt_tokens(world, pair.target_text),
                                       prompt_tokens(world, pair.converse_text));
    image = make_image(world, rng, 4);
  }

  ModelInputs inputs(std::size_t tokens) const {
    ModelInputs in{image, task_prefix(TaskKind::Describe)};
    while (in.tokens.size() < tokens) in.tokens.push_back(world.objects()[in.tokens.size() % 16]);
    return in;
  }
};

const Setup& setup() {
  static const Setup s;
  return s;
}

void BM_Forward(benchmark::State& state) {
  const auto& s = setup();
  const auto in = s.inputs(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(forward(s.model, in));
}
BENCHMARK(BM_Forward)->Arg(4)->Arg(12)->Arg(28);

void BM_SteeredForward(benchmark::State& state) {
  const auto& s = setup();
  const auto in = s.inputs(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(steered_forward(s.model, in, s.context, s.params));
}
BENCHMARK(BM_SteeredForward)->Arg(4)->Arg(12)->Arg(28);

void BM_SteeredBackward(benchmark::State& state) {
  const auto& s = setup();
  const auto in = s.inputs(12);
  std::vector<bool> targets(in.tokens.size(), true);
  targets[0] = false;
  for (auto _ : state) {
    const Tensor loss = sequence_loss(steered_forward(s.model, in, s.context, s.params).logits, in, targets);
    benchmark::DoNotOptimize(backward(loss));
  }
}
BENCHMARK(BM_SteeredBackward);

void BM_Generate(benchmark::State& state) {
  const auto& s = setup();
  const auto in = s.inputs(2);
  for (auto _ : state) {
    Rng rng(3);
    benchmark::DoNotOptimize(generate(s.model, in, 10, SamplerConfig::greedy(), rng));
  }
}
BENCHMARK(BM_Generate);

void BM_SteeredGenerate(benchmark::State& state) {
  const auto& s = setup();
  const auto in = s.inputs(2);
  for (auto _ : state) {
    Rng rng(3);
    benchmark::DoNotOptimize(steered_generate(s.model, in, s.context, s.params, 10, SamplerConfig::greedy(), rng));
  }
}
BENCHMARK(BM_SteeredGenerate);

void BM_SteererMask(benchmark::State& state) {
  for (auto _ : state) benchmark::DoNotOptimize(sparse_mask_macs(static_cast<std::size_t>(state.range(0))));
}
BENCHMARK(BM_SteererMask)->Arg(16)->Arg(64);

void BM_WelchTest(benchmark::State& state) {
  Rng rng(5);
  std::vector<double> a(static_cast<std::size_t>(state.range(0))), b(a.size());
  for (auto& x : a) x = rng.normal();
  for (auto& x : b) x = rng.normal() + 0.2;
  for (auto _ : state) benchmark::DoNotOptimize(welch_t_test(a, b));
}
BENCHMARK(BM_WelchTest)->Arg(100)->Arg(10000);

void BM_BuildDataset(benchmark::State& state) {
  const auto& s = setup();
  ForgeConfig fc;
  fc.n_images = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(build_dataset(s.world, fc));
}
BENCHMARK(BM_BuildDataset)->Arg(200)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
