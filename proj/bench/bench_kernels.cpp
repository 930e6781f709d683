// Parallel kernels against their serial references, plus one training step.
#include <benchmark/benchmark.h>
#include <omp.h>

#include <random>

#include "iapnet/kernels.hpp"
#include "iapnet/model.hpp"
#include "iapnet/schema.hpp"

using namespace iapnet;

namespace {

void fill(std::vector<float>& v, unsigned seed) {
  std::mt19937 gen(seed);
  std::uniform_real_distribution<float> d(-1.0f, 1.0f);
  for (auto& x : v) x = d(gen);
}

struct ConvCase {
  ConvGeometry g;
  Tensor input, output;
  std::vector<float> weight, bias;

  ConvCase(std::size_t batch, std::size_t channels, std::size_t extent) {
    g.in_channels = g.out_channels = channels;
    input = Tensor(batch, channels, extent, extent);
    output = Tensor(batch, channels, extent, extent);
    weight.resize(g.weight_count());
    bias.resize(channels);
    fill(input.data, 1);
    fill(weight, 2);
    fill(bias, 3);
  }
};

template <bool Parallel>
void BM_ConvForward(benchmark::State& state) {
  ConvCase c(16, static_cast<std::size_t>(state.range(0)), static_cast<std::size_t>(state.range(1)));
  for (auto _ : state) {
    if constexpr (Parallel) {
      kernels::conv2d_forward(c.input, c.weight, c.bias, c.g, c.output);
    } else {
      kernels::reference::conv2d_forward(c.input, c.weight, c.bias, c.g, c.output);
    }
    benchmark::DoNotOptimize(c.output.data.data());
  }
  state.counters["threads"] = omp_get_max_threads();
}

template <bool Parallel>
void BM_ConvBackward(benchmark::State& state) {
  ConvCase c(16, static_cast<std::size_t>(state.range(0)), static_cast<std::size_t>(state.range(1)));
  Tensor grad_out = c.output, grad_in = c.input;
  fill(grad_out.data, 4);
  std::vector<float> gw(c.weight.size()), gb(c.bias.size());
  for (auto _ : state) {
    if constexpr (Parallel) {
      kernels::conv2d_backward(c.input, c.weight, grad_out, c.g, &grad_in, gw, gb);
    } else {
      kernels::reference::conv2d_backward(c.input, c.weight, grad_out, c.g, &grad_in, gw, gb);
    }
    benchmark::DoNotOptimize(gw.data());
  }
}

template <bool Parallel>
void BM_Gemm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::vector<float> a(n * n), b(n * n), c(n * n);
  fill(a, 5);
  fill(b, 6);
  for (auto _ : state) {
    if constexpr (Parallel) {
      kernels::gemm(n, n, n, a.data(), b.data(), c.data());
    } else {
      kernels::reference::gemm(n, n, n, a.data(), b.data(), c.data());
    }
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}

void BM_TinyForward(benchmark::State& state) {
  const PredictorModel model(reduced_schema(), tiny_backbone(), 1);
  std::vector<Image> images(static_cast<std::size_t>(state.range(0)), Image(64, 64));
  for (auto& im : images) fill(im.pixels, 7);
  for (auto _ : state) benchmark::DoNotOptimize(model.forward(images));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

}  // namespace

BENCHMARK(BM_ConvForward<true>)->Args({16, 32})->Args({32, 16})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvForward<false>)->Args({16, 32})->Args({32, 16})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvBackward<true>)->Args({16, 32})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvBackward<false>)->Args({16, 32})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Gemm<true>)->Arg(128)->Arg(256);
BENCHMARK(BM_Gemm<false>)->Arg(128)->Arg(256);
BENCHMARK(BM_TinyForward)->Arg(16)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
