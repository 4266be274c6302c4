#include <random>
#include <vector>

#include <benchmark/benchmark.h>

#include "gemtrans/kernels.hpp"

namespace kernels = gemtrans::kernels;

namespace {

std::vector<float> filled(std::size_t n, unsigned seed) {
  std::mt19937 rng(seed);
  std::normal_distribution<float> dist;
  std::vector<float> v(n);
  for (auto& x : v) x = dist(rng);
  return v;
}

// Arg: square size for gemm, rows for the row-wise kernels (cols fixed at 64).
template <bool Parallel>
void BM_Gemm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = filled(n * n, 1), b = filled(n * n, 2);
  std::vector<float> c(n * n);
  for (auto _ : state) {
    if constexpr (Parallel)
      kernels::parallel::gemm(false, true, n, n, n, a.data(), b.data(), c.data(), false);
    else
      kernels::serial::gemm(false, true, n, n, n, a.data(), b.data(), c.data(), false);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}

template <bool Parallel>
void BM_Softmax(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0)), cols = std::size_t{64};
  const auto in = filled(rows * cols, 3);
  std::vector<float> out(in.size());
  for (auto _ : state) {
    if constexpr (Parallel)
      kernels::parallel::softmax(in.data(), out.data(), rows, cols, 1);
    else
      kernels::serial::softmax(in.data(), out.data(), rows, cols, 1);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(in.size()));
}

template <bool Parallel>
void BM_Layernorm(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0)), cols = std::size_t{64};
  const auto in = filled(rows * cols, 4);
  const std::vector<float> gain(cols, 1.0f), bias(cols, 0.0f);
  std::vector<float> out(in.size()), normalized(in.size()), inv_std(rows);
  for (auto _ : state) {
    if constexpr (Parallel)
      kernels::parallel::layernorm(in.data(), gain.data(), bias.data(), out.data(), normalized.data(),
                                   inv_std.data(), rows, cols, 1e-5f);
    else
      kernels::serial::layernorm(in.data(), gain.data(), bias.data(), out.data(), normalized.data(),
                                 inv_std.data(), rows, cols, 1e-5f);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(in.size()));
}

template <bool Parallel>
void BM_Gelu(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0)) * 64;
  const auto in = filled(n, 5);
  std::vector<float> out(n);
  for (auto _ : state) {
    if constexpr (Parallel)
      kernels::parallel::gelu(in.data(), out.data(), n);
    else
      kernels::serial::gelu(in.data(), out.data(), n);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
}

}  // namespace

BENCHMARK(BM_Gemm<false>)->Name("gemm/serial")->Arg(64)->Arg(256);
BENCHMARK(BM_Gemm<true>)->Name("gemm/parallel")->Arg(64)->Arg(256)->UseRealTime();
BENCHMARK(BM_Softmax<false>)->Name("softmax/serial")->Arg(1024)->Arg(16384);
BENCHMARK(BM_Softmax<true>)->Name("softmax/parallel")->Arg(1024)->Arg(16384)->UseRealTime();
BENCHMARK(BM_Layernorm<false>)->Name("layernorm/serial")->Arg(1024)->Arg(16384);
BENCHMARK(BM_Layernorm<true>)->Name("layernorm/parallel")->Arg(1024)->Arg(16384)->UseRealTime();
BENCHMARK(BM_Gelu<false>)->Name("gelu/serial")->Arg(1024)->Arg(16384);
BENCHMARK(BM_Gelu<true>)->Name("gelu/parallel")->Arg(1024)->Arg(16384)->UseRealTime();

BENCHMARK_MAIN();
