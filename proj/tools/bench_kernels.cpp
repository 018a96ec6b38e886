// Serial reference kernels against their OpenMP counterparts. Run with
// OMP_NUM_THREADS set to compare thread counts.

#include <benchmark/benchmark.h>

#include "contravirt/datakit.hpp"
#include "contravirt/kernels.hpp"

using namespace contravirt;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, std::uint64_t stream) {
  Matrix m(r, c);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = data::hash_uniform(1, stream, i) - 0.5;
  return m;
}

CsrMatrix random_graph(std::size_t n, std::size_t per_row) {
  Matrix d(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < per_row; ++j) d(i, (i * 7 + j * 13) % n) = data::hash_uniform(2, i, j);
  return CsrMatrix::from_dense(d);
}

template <void (*Kernel)(const Matrix&, const Matrix&, Matrix&, bool)>
void bm_gemm_nn(benchmark::State& st) {
  const auto n = static_cast<std::size_t>(st.range(0));
  const Matrix a = random_matrix(n * 36, 46, 1), b = random_matrix(46, n, 2);
  Matrix c(a.rows(), b.cols());
  for (auto _ : st) {
    Kernel(a, b, c, false);
    benchmark::DoNotOptimize(c.data());
  }
  st.SetItemsProcessed(st.iterations() * static_cast<long>(a.rows() * a.cols() * b.cols()));
}

template <void (*Kernel)(const Matrix&, const Matrix&, Matrix&, bool)>
void bm_gemm_tn(benchmark::State& st) {
  const auto n = static_cast<std::size_t>(st.range(0));
  const Matrix a = random_matrix(n * 36, 46, 3), b = random_matrix(n * 36, n, 4);
  Matrix c(a.cols(), b.cols());
  for (auto _ : st) {
    Kernel(a, b, c, false);
    benchmark::DoNotOptimize(c.data());
  }
  st.SetItemsProcessed(st.iterations() * static_cast<long>(a.rows() * a.cols() * b.cols()));
}

template <void (*Kernel)(const CsrMatrix&, const Matrix&, Matrix&, bool)>
void bm_spmm(benchmark::State& st) {
  const auto width = static_cast<std::size_t>(st.range(0));
  const CsrMatrix s = random_graph(81, 8);
  const Matrix x = random_matrix(81 * 36 * 32, width, 5);
  Matrix y(x.rows(), width);
  for (auto _ : st) {
    Kernel(s, x, y, false);
    benchmark::DoNotOptimize(y.data());
  }
  st.SetItemsProcessed(st.iterations() * static_cast<long>(s.nnz() * 36 * 32 * width));
}

template <void (*Kernel)(const Matrix&, Matrix&)>
void bm_gram(benchmark::State& st) {
  const auto cols = static_cast<std::size_t>(st.range(0));
  const Matrix x = random_matrix(4000, cols, 6);
  Matrix g(cols, cols);
  for (auto _ : st) {
    Kernel(x, g);
    benchmark::DoNotOptimize(g.data());
  }
}

}  // namespace

BENCHMARK(bm_gemm_nn<kernels::serial::gemm_nn>)->Name("gemm_nn/serial")->Arg(32)->Arg(64);
BENCHMARK(bm_gemm_nn<kernels::parallel::gemm_nn>)->Name("gemm_nn/parallel")->Arg(32)->Arg(64);
BENCHMARK(bm_gemm_tn<kernels::serial::gemm_tn>)->Name("gemm_tn/serial")->Arg(32)->Arg(64);
BENCHMARK(bm_gemm_tn<kernels::parallel::gemm_tn>)->Name("gemm_tn/parallel")->Arg(32)->Arg(64);
BENCHMARK(bm_spmm<kernels::serial::spmm_blocks>)->Name("spmm_blocks/serial")->Arg(32)->Arg(64);
BENCHMARK(bm_spmm<kernels::parallel::spmm_blocks>)->Name("spmm_blocks/parallel")->Arg(32)->Arg(64);
BENCHMARK(bm_gram<kernels::serial::gram>)->Name("gram/serial")->Arg(108)->Arg(432);
BENCHMARK(bm_gram<kernels::parallel::gram>)->Name("gram/parallel")->Arg(108)->Arg(432);

BENCHMARK_MAIN();
