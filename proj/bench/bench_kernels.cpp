#include <benchmark/benchmark.h>

#include <vector>

#include "leafcam/kernels.hpp"
#include "leafcam/rng.hpp"

namespace {

using namespace leafcam;

std::vector<float> random_vec(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<float> v(n);
  for (float& f : v) f = rng.uniform(-1.0f, 1.0f);
  return v;
}

struct ConvCase {
  ConvGeometry g;
  std::vector<float> x, w, b, y;

  explicit ConvCase(int channels) {
    g = make_conv_geometry(32, channels, 32, 32, 2 * channels, 3, 1, Padding::same);
    x = random_vec(std::size_t(g.batch) * g.in_channels * g.in_height * g.in_width, 1);
    w = random_vec(std::size_t(g.out_channels) * g.in_channels * g.kernel * g.kernel, 2);
    b = random_vec(g.out_channels, 3);
    y.resize(std::size_t(g.batch) * g.out_channels * g.out_height * g.out_width);
  }
};

template <bool Parallel>
void BM_ConvForward(benchmark::State& state) {
  ConvCase c(static_cast<int>(state.range(0)));
  for (auto _ : state) {
    if constexpr (Parallel) {
      kernels::parallel::conv2d_forward<float>(c.g, c.x, c.w, c.b, c.y);
    } else {
      kernels::serial::conv2d_forward<float>(c.g, c.x, c.w, c.b, c.y);
    }
    benchmark::DoNotOptimize(c.y.data());
  }
  state.counters["threads"] = kernels::max_threads();
}

template <bool Parallel>
void BM_ConvBackwardWeight(benchmark::State& state) {
  ConvCase c(static_cast<int>(state.range(0)));
  std::vector<float> dw(c.w.size()), db(c.b.size());
  for (auto _ : state) {
    if constexpr (Parallel) {
      kernels::parallel::conv2d_backward_weight<float>(c.g, c.y, c.x, dw, db);
    } else {
      kernels::serial::conv2d_backward_weight<float>(c.g, c.y, c.x, dw, db);
    }
    benchmark::DoNotOptimize(dw.data());
  }
}

template <bool Parallel>
void BM_Dense(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  DenseGeometry g{64, n, n};
  auto x = random_vec(std::size_t(64) * n, 1), w = random_vec(std::size_t(n) * n, 2), b = random_vec(n, 3);
  std::vector<float> y(std::size_t(64) * n);
  for (auto _ : state) {
    if constexpr (Parallel) {
      kernels::parallel::dense_forward<float>(g, x, w, b, y);
    } else {
      kernels::serial::dense_forward<float>(g, x, w, b, y);
    }
    benchmark::DoNotOptimize(y.data());
  }
}

BENCHMARK(BM_ConvForward<false>)->Arg(8)->Arg(16);
BENCHMARK(BM_ConvForward<true>)->Arg(8)->Arg(16);
BENCHMARK(BM_ConvBackwardWeight<false>)->Arg(8)->Arg(16);
BENCHMARK(BM_ConvBackwardWeight<true>)->Arg(8)->Arg(16);
BENCHMARK(BM_Dense<false>)->Arg(64)->Arg(256);
BENCHMARK(BM_Dense<true>)->Arg(64)->Arg(256);

}  // namespace

BENCHMARK_MAIN();
