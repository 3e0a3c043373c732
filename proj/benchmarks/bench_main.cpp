#include <random>
#include <vector>

#include <benchmark/benchmark.h>

#include "imudiff/allan.hpp"
#include "imudiff/denoiser.hpp"
#include "imudiff/nav_eval.hpp"

namespace {

using namespace imudiff;

std::vector<double> white(std::size_t n) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> nd(0.0, 0.01);
  std::vector<double> v(n);
  for (double& x : v) x = nd(rng);
  return v;
}

void BM_ComputeAv(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto x = white(n);
  const auto taus = default_taus(n, 200.0);
  for (auto _ : state) benchmark::DoNotOptimize(compute_av(x, 200.0, taus));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
}
BENCHMARK(BM_ComputeAv)->Arg(100'000)->Arg(1'000'000)->Unit(benchmark::kMillisecond);

struct DenoiserFixture {
  DenoiserConfig config;
  DenoiserWeights weights;
  ad::Tensor x, c;
  std::vector<std::size_t> t;

  DenoiserFixture(std::size_t C, std::size_t L, std::size_t B) {
    config.base_channels_C = C;
    config.window_L = L;
    weights = init_weights(config, 1);
    std::mt19937_64 rng(2);
    std::normal_distribution<double> nd(0.0, 1.0);
    std::vector<double> a(B * 6 * L), b(B * 6 * L);
    for (double& v : a) v = nd(rng);
    for (double& v : b) v = nd(rng);
    x = ad::Tensor::from({B, 6, L}, a);
    c = ad::Tensor::from({B, 6, L}, b);
    t.assign(B, 3);
  }
};

void BM_DenoiserForward(benchmark::State& state) {
  DenoiserFixture f(static_cast<std::size_t>(state.range(0)), 32, 32);
  for (auto _ : state) {
    benchmark::DoNotOptimize(denoiser_forward(f.x, f.t, f.c, f.weights, f.config, Mode::eval));
  }
}
BENCHMARK(BM_DenoiserForward)->Arg(8)->Arg(32)->Unit(benchmark::kMillisecond);

void BM_DenoiserForwardBackward(benchmark::State& state) {
  DenoiserFixture f(static_cast<std::size_t>(state.range(0)), 32, 32);
  auto params = f.weights.parameters();
  for (auto _ : state) {
    for (auto& p : params) p.zero_grad();
    auto y = denoiser_forward(f.x, f.t, f.c, f.weights, f.config, Mode::train);
    auto loss = ad::mean(ad::mul(y, y));
    loss.backward();
    benchmark::DoNotOptimize(params.front().grad());
  }
}
BENCHMARK(BM_DenoiserForwardBackward)->Arg(8)->Arg(32)->Unit(benchmark::kMillisecond);

void BM_DeadReckon(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto g = white(n);
  ChannelData ch;
  for (std::size_t c = 0; c < kChannels; ++c) ch[c] = g;
  for (double& v : ch[accel_z]) v += kGravity;
  const ImuSeries imu(200.0, 0.0, std::move(ch));
  for (auto _ : state) benchmark::DoNotOptimize(dead_reckon(imu, NavState{}));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
}
BENCHMARK(BM_DeadReckon)->Arg(12'000)->Arg(120'000)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
