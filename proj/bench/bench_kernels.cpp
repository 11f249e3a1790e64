// Parallel kernels against the serial reference on the network's layer shapes.

#include <benchmark/benchmark.h>

#include <vector>

#include "clcs/kernels.hpp"
#include "clcs/random.hpp"

using namespace clcs;
using kernels::ConvGeometry;

namespace {

std::vector<float> random_floats(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(rng.uniform(-1, 1));
  return v;
}

// Batch 8 at 64x64: enc1, enc2, enc3, dec1, dec2 (with skip), head.
ConvGeometry layer(int i) {
  static const ConvGeometry shapes[] = {
      {8, 3, 64, 64, 16, 3, 1, 1},  {8, 16, 64, 64, 32, 3, 2, 1}, {8, 32, 32, 32, 32, 3, 2, 1},
      {8, 32, 32, 32, 16, 3, 1, 1}, {8, 32, 64, 64, 8, 3, 1, 1},  {8, 8, 64, 64, 4, 1, 1, 0},
  };
  return shapes[i];
}

template <bool Reference>
void conv_forward(benchmark::State& state) {
  const ConvGeometry g = layer(static_cast<int>(state.range(0)));
  const auto x = random_floats(g.input_size(), 1);
  const auto w = random_floats(g.weight_size(), 2);
  const auto b = random_floats(g.out_channels, 3);
  std::vector<float> y(g.output_size());
  for (auto _ : state) {
    if constexpr (Reference)
      kernels::reference::conv2d_forward<float>(g, x, w, b, y);
    else
      kernels::conv2d_forward<float>(g, x, w, b, y);
    benchmark::DoNotOptimize(y.data());
  }
  state.counters["MAC/s"] = benchmark::Counter(
      static_cast<double>(g.output_size() * g.patch()), benchmark::Counter::kIsIterationInvariantRate);
}

template <bool Reference>
void conv_backward(benchmark::State& state) {
  const ConvGeometry g = layer(static_cast<int>(state.range(0)));
  const auto x = random_floats(g.input_size(), 1);
  const auto w = random_floats(g.weight_size(), 2);
  const auto gy = random_floats(g.output_size(), 3);
  std::vector<float> gx(g.input_size()), gw(g.weight_size()), gb(g.out_channels);
  for (auto _ : state) {
    if constexpr (Reference)
      kernels::reference::conv2d_backward<float>(g, x, w, gy, gx, gw, gb);
    else
      kernels::conv2d_backward<float>(g, x, w, gy, gx, gw, gb);
    benchmark::DoNotOptimize(gx.data());
  }
  state.counters["MAC/s"] = benchmark::Counter(
      2.0 * static_cast<double>(g.output_size() * g.patch()), benchmark::Counter::kIsIterationInvariantRate);
}

template <bool Reference>
void gemm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_floats(n * n, 1);
  const auto b = random_floats(n * n, 2);
  std::vector<float> c(n * n);
  for (auto _ : state) {
    if constexpr (Reference)
      kernels::reference::gemm_nn<float>(n, n, n, a.data(), b.data(), c.data());
    else
      kernels::gemm_nn<float>(n, n, n, a.data(), b.data(), c.data());
    benchmark::DoNotOptimize(c.data());
  }
  state.counters["MAC/s"] = benchmark::Counter(static_cast<double>(n * n * n),
                                               benchmark::Counter::kIsIterationInvariantRate);
}

}  // namespace

BENCHMARK(conv_forward<false>)->DenseRange(0, 5)->Unit(benchmark::kMillisecond);
BENCHMARK(conv_forward<true>)->DenseRange(0, 5)->Unit(benchmark::kMillisecond);
BENCHMARK(conv_backward<false>)->DenseRange(0, 5)->Unit(benchmark::kMillisecond);
BENCHMARK(conv_backward<true>)->DenseRange(0, 5)->Unit(benchmark::kMillisecond);
BENCHMARK(gemm<false>)->RangeMultiplier(2)->Range(64, 512)->Unit(benchmark::kMillisecond);
BENCHMARK(gemm<true>)->RangeMultiplier(2)->Range(64, 512)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
