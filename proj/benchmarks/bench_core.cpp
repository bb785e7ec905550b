#include <benchmark/benchmark.h>

#include <random>

#include "puregen/ddpm.hpp"
#include "puregen/ebm.hpp"
#include "puregen/graph.hpp"
#include "puregen/tape.hpp"

using namespace puregen;

namespace {

Tensor random_image(const Shape& shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  Tensor t(shape);
  for (float& v : t.data()) v = u(rng);
  return t;
}

void BM_Conv2dForward(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  GraphBuilder b(1);
  int x = b.input({c, 8, 8});
  Graph g = std::move(b).build(b.sum(b.conv2d(x, "c", c, 3, 1, 1)));
  Tape<float> tape(g);
  const Tensor in = random_image({c, 8, 8}, 2);
  for (auto _ : state) benchmark::DoNotOptimize(tape.forward(in)[0]);
}
BENCHMARK(BM_Conv2dForward)->Arg(16)->Arg(32)->Arg(64);

void BM_Conv2dForwardBackward(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  GraphBuilder b(1);
  int x = b.input({c, 8, 8});
  Graph g = std::move(b).build(b.sum(b.conv2d(x, "c", c, 3, 1, 1)));
  Tape<float> tape(g);
  const Tensor in = random_image({c, 8, 8}, 2);
  for (auto _ : state) {
    tape.forward(in);
    tape.backward();
    benchmark::DoNotOptimize(tape.input_grad()[0]);
  }
}
BENCHMARK(BM_Conv2dForwardBackward)->Arg(16)->Arg(32)->Arg(64);

void BM_Energy(benchmark::State& state) {
  const auto model = ebm::make_convnet_energy({3, 8, 8}, 1, static_cast<int>(state.range(0)));
  const Tensor x = random_image({3, 8, 8}, 3);
  for (auto _ : state) benchmark::DoNotOptimize(ebm::energy(model, x));
}
BENCHMARK(BM_Energy)->Arg(16)->Arg(32);

void BM_LangevinStep(benchmark::State& state) {
  const auto model = ebm::make_convnet_energy({3, 8, 8}, 1, 16);
  ebm::EnergyEvaluator eval(model);
  GaussianNoise noise(4);
  Tensor x = random_image({3, 8, 8}, 5);
  for (auto _ : state) ebm::langevin_chain(eval, x, 1, 5e-5f, 1.0f, true, noise);
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_LangevinStep);

void BM_DdpmPurify(benchmark::State& state) {
  const auto model = ddpm::make_unet({3, 8, 8}, 1, 16, 32);
  const auto schedule = ddpm::make_schedule();
  const Tensor x = random_image({3, 8, 8}, 6);
  const int steps = static_cast<int>(state.range(0));
  std::uint64_t seed = 0;
  for (auto _ : state) benchmark::DoNotOptimize(ddpm::ddpm_purify(model, schedule, x, steps, {}, seed++).image[0]);
  state.SetItemsProcessed(state.iterations() * steps);
}
BENCHMARK(BM_DdpmPurify)->Arg(10)->Arg(75);

}  // namespace

BENCHMARK_MAIN();
