#include <vector>

#include <benchmark/benchmark.h>

#include "mistere/kernels.hpp"
#include "mistere/rng.hpp"

namespace k = mistere::kernels;

namespace {

std::vector<double> random_matrix(std::size_t n, std::uint64_t seed) {
  mistere::Rng rng(seed);
  std::vector<double> m(n);
  for (double& v : m) v = rng.normal();
  return m;
}

// Square products: a[n x n] * b[n x n].
template <auto Kernel>
void BM_matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_matrix(n * n, 1), b = random_matrix(n * n, 2);
  std::vector<double> c(n * n);
  for (auto _ : state) {
    Kernel(a, b, c, n, n, n);
    benchmark::DoNotOptimize(c.data());
    benchmark::ClobberMemory();
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(n * n * n));
  state.counters["threads"] = k::max_threads();
}

template <auto Kernel>
void BM_matmul_acc(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_matrix(n * n, 3), b = random_matrix(n * n, 4);
  std::vector<double> c(n * n, 0.0);
  for (auto _ : state) {
    Kernel(a, b, c, n, n, n);
    benchmark::DoNotOptimize(c.data());
    benchmark::ClobberMemory();
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(n * n * n));
}

}  // namespace

BENCHMARK(BM_matmul<k::serial::matmul>)->Name("matmul/serial")->RangeMultiplier(2)->Range(16, 256);
BENCHMARK(BM_matmul<k::matmul>)->Name("matmul/omp")->RangeMultiplier(2)->Range(16, 256);
BENCHMARK(BM_matmul_acc<k::serial::matmul_a_bt_acc>)->Name("matmul_a_bt/serial")->Range(64, 256);
BENCHMARK(BM_matmul_acc<k::matmul_a_bt_acc>)->Name("matmul_a_bt/omp")->Range(64, 256);
BENCHMARK(BM_matmul_acc<k::serial::matmul_at_b_acc>)->Name("matmul_at_b/serial")->Range(64, 256);
BENCHMARK(BM_matmul_acc<k::matmul_at_b_acc>)->Name("matmul_at_b/omp")->Range(64, 256);

BENCHMARK_MAIN();
