#include <benchmark/benchmark.h>

#include <random>

#include "npath/inversion.hpp"
#include "npath/patch_prior.hpp"
#include "npath/synthetic.hpp"
#include "npath/topics.hpp"

using namespace npath;

namespace {

Tensor noise(const Shape& shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Tensor t(shape);
  for (double& v : t.data()) v = u(rng);
  return t;
}

struct Net {
  NetworkSpec spec = toy_spec();
  NetworkWeights weights = init_weights(spec, 1);
  Net() { weights.input_stats = {{0.5, 0.5, 0.5}, {0.25, 0.25, 0.25}}; }
};

void BM_Forward(benchmark::State& state) {
  const Net net;
  const Tensor x = noise(net.spec.input, 2);
  for (auto _ : state) benchmark::DoNotOptimize(forward(net.weights, net.spec, x).logits);
}
BENCHMARK(BM_Forward);

void BM_FeatureEnergyGradient(benchmark::State& state) {
  const Net net;
  const std::size_t layer = net.spec.topology().pool5;
  const Tensor phi0 = forward(net.weights, net.spec, noise(net.spec.input, 3), nullptr, layer).activations[layer];
  const Tensor x = noise(net.spec.input, 4);
  for (auto _ : state) benchmark::DoNotOptimize(data_energy_inversion(x, net.weights, net.spec, layer, phi0).energy);
}
BENCHMARK(BM_FeatureEnergyGradient);

void BM_ClassScoreGradient(benchmark::State& state) {
  const Net net;
  const Tensor x = noise(net.spec.input, 5);
  for (auto _ : state) benchmark::DoNotOptimize(data_score_class(x, net.weights, net.spec, 1).energy);
}
BENCHMARK(BM_ClassScoreGradient);

void BM_Match(benchmark::State& state) {
  SceneConfig sc;
  sc.per_class = 10;
  const PatchDatabase db = build_class_database(make_scenes(sc).images(), 3, 1);
  const Tensor x = noise({3, 32, 32}, 6);
  const auto method = state.range(0) == 0 ? MatchMethod::brute_force : MatchMethod::accelerated;
  for (auto _ : state) benchmark::DoNotOptimize(match(db, x, 2, method).matches.size());
  state.SetLabel(state.range(0) == 0 ? "brute force" : "accelerated");
  state.counters["entries"] = static_cast<double>(db.size());
}
BENCHMARK(BM_Match)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_Nmf(benchmark::State& state) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Eigen::MatrixXd V(60, 64);
  for (Eigen::Index i = 0; i < V.size(); ++i) V.data()[i] = u(rng);
  for (auto _ : state) benchmark::DoNotOptimize(nmf(V, 6, static_cast<int>(state.range(0)), 1).reconstruction_error);
}
BENCHMARK(BM_Nmf)->Arg(100)->Arg(500)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
