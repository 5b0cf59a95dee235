// Serial reference vs OpenMP kernels on shapes from the zoo models.

#include <benchmark/benchmark.h>

#include <vector>

#include "bwft/kernels.hpp"
#include "bwft/rng.hpp"

using namespace bwft;

namespace {

std::vector<float> noise(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<float> v(n);
  for (auto& x : v) x = rng.uniform(-1.0f, 1.0f);
  return v;
}

// 16x16x16 -> 16x16x32, same padding, batch 4
kernels::ConvGeometry conv_shape() {
  kernels::ConvGeometry g;
  g.batch = 4;
  g.in_h = g.in_w = g.out_h = g.out_w = 16;
  g.in_c = 16;
  g.out_c = 32;
  g.pad_top = g.pad_left = 1;
  return g;
}

template <auto Fn>
void conv_forward(benchmark::State& state) {
  const auto g = conv_shape();
  const auto x = noise(g.input_size(), 1), w = noise(g.weight_size(), 2), b = noise(g.out_c, 3);
  std::vector<float> y(g.output_size());
  for (auto _ : state) {
    Fn(g, x, w, b, y);
    benchmark::DoNotOptimize(y.data());
  }
}

template <auto Fn>
void conv_backward_input(benchmark::State& state) {
  const auto g = conv_shape();
  const auto dy = noise(g.output_size(), 1), w = noise(g.weight_size(), 2);
  std::vector<float> dx(g.input_size());
  for (auto _ : state) {
    Fn(g, dy, w, dx);
    benchmark::DoNotOptimize(dx.data());
  }
}

template <auto Fn>
void conv_backward_params(benchmark::State& state) {
  const auto g = conv_shape();
  const auto x = noise(g.input_size(), 1), dy = noise(g.output_size(), 2);
  std::vector<float> dw(g.weight_size()), db(g.out_c);
  for (auto _ : state) {
    Fn(g, x, dy, dw, db);
    benchmark::DoNotOptimize(dw.data());
  }
}

// fc1 of the head: 512 -> 128, batch 16
constexpr std::size_t kRows = 16, kIn = 512, kOut = 128;

template <auto Fn>
void dense_forward(benchmark::State& state) {
  const auto x = noise(kRows * kIn, 1), w = noise(kIn * kOut, 2), b = noise(kOut, 3);
  std::vector<float> y(kRows * kOut);
  for (auto _ : state) {
    Fn(kRows, kIn, kOut, x, w, b, y);
    benchmark::DoNotOptimize(y.data());
  }
}

template <auto Fn>
void dense_backward_params(benchmark::State& state) {
  const auto x = noise(kRows * kIn, 1), dy = noise(kRows * kOut, 2);
  std::vector<float> dw(kIn * kOut), db(kOut);
  for (auto _ : state) {
    Fn(kRows, kIn, kOut, x, dy, dw, db);
    benchmark::DoNotOptimize(dw.data());
  }
}

template <auto Fn>
void pool_forward(benchmark::State& state) {
  kernels::PoolGeometry g;
  g.batch = 4;
  g.in_h = g.in_w = 32;
  g.channels = 16;
  g.out_h = g.out_w = 16;
  const auto x = noise(g.input_size(), 1);
  std::vector<float> y(g.output_size());
  std::vector<std::uint32_t> arg(g.output_size());
  for (auto _ : state) {
    Fn(g, x, y, arg);
    benchmark::DoNotOptimize(y.data());
  }
}

}  // namespace

BENCHMARK(conv_forward<kernels::serial::conv2d_forward>)->Name("conv_forward/serial");
BENCHMARK(conv_forward<kernels::parallel::conv2d_forward>)->Name("conv_forward/parallel");
BENCHMARK(conv_backward_input<kernels::serial::conv2d_backward_input>)->Name("conv_backward_input/serial");
BENCHMARK(conv_backward_input<kernels::parallel::conv2d_backward_input>)->Name("conv_backward_input/parallel");
BENCHMARK(conv_backward_params<kernels::serial::conv2d_backward_params>)->Name("conv_backward_params/serial");
BENCHMARK(conv_backward_params<kernels::parallel::conv2d_backward_params>)->Name("conv_backward_params/parallel");
BENCHMARK(dense_forward<kernels::serial::dense_forward>)->Name("dense_forward/serial");
BENCHMARK(dense_forward<kernels::parallel::dense_forward>)->Name("dense_forward/parallel");
BENCHMARK(dense_backward_params<kernels::serial::dense_backward_params>)->Name("dense_backward_params/serial");
BENCHMARK(dense_backward_params<kernels::parallel::dense_backward_params>)->Name("dense_backward_params/parallel");
BENCHMARK(pool_forward<kernels::serial::maxpool2d_forward>)->Name("maxpool_forward/serial");
BENCHMARK(pool_forward<kernels::parallel::maxpool2d_forward>)->Name("maxpool_forward/parallel");

BENCHMARK_MAIN();
