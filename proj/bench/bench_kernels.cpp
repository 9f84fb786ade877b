// Serial reference kernels against their OpenMP counterparts.

#include <benchmark/benchmark.h>

#include "chaintree/gnn.hpp"
#include "chaintree/kernels.hpp"
#include "chaintree/matrix.hpp"
#include "chaintree/rng.hpp"
#include "chaintree/tree.hpp"

using namespace chaintree;

namespace {

Matrix<float> random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  Rng rng(seed);
  Matrix<float> m(rows, cols);
  for (auto& v : m.storage()) v = static_cast<float>(rng.normal());
  return m;
}

template <bool Parallel>
void BM_GemmNN(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_matrix(n, n, 1), b = random_matrix(n, n, 2);
  Matrix<float> c(n, n);
  for (auto _ : state) {
    if constexpr (Parallel) kernels::parallel::gemm_nn<float>(a, b, c);
    else kernels::serial::gemm_nn<float>(a, b, c);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}

template <bool Parallel>
void BM_GemmTN(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_matrix(n, n, 3), b = random_matrix(n, n, 4);
  Matrix<float> c(n, n);
  for (auto _ : state) {
    if constexpr (Parallel) kernels::parallel::gemm_tn<float>(a, b, c);
    else kernels::serial::gemm_tn<float>(a, b, c);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}

// Propagation over a random tree with 64 hidden units.
template <bool Parallel>
void BM_SpmmTree(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto tree = random_tree(n, 1, 5);
  const auto adj = normalized_adjacency<float>(tree, Direction::Undirected);
  const auto x = random_matrix(n, 64, 6);
  Matrix<float> y(n, 64);
  for (auto _ : state) {
    if constexpr (Parallel) kernels::parallel::spmm<float>(adj, x, y);
    else kernels::serial::spmm<float>(adj, x, y);
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(adj.nnz() * 64));
}

}  // namespace

BENCHMARK(BM_GemmNN<false>)->Name("gemm_nn/serial")->RangeMultiplier(2)->Range(32, 512);
BENCHMARK(BM_GemmNN<true>)->Name("gemm_nn/parallel")->RangeMultiplier(2)->Range(32, 512);
BENCHMARK(BM_GemmTN<false>)->Name("gemm_tn/serial")->RangeMultiplier(2)->Range(32, 512);
BENCHMARK(BM_GemmTN<true>)->Name("gemm_tn/parallel")->RangeMultiplier(2)->Range(32, 512);
BENCHMARK(BM_SpmmTree<false>)->Name("spmm_tree/serial")->RangeMultiplier(8)->Range(64, 32768);
BENCHMARK(BM_SpmmTree<true>)->Name("spmm_tree/parallel")->RangeMultiplier(8)->Range(64, 32768);

BENCHMARK_MAIN();
