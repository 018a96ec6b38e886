#pragma once

#include "contravirt/matrix.hpp"

// Dense and sparse kernels used by the autodiff engine, the diffusion solver
// and the ridge baselines. Every kernel exists twice: a plain serial loop kept
// as the reference, and an OpenMP version that partitions output elements
// across threads. Both accumulate each output element in the same order, so
// their results are bitwise identical regardless of thread count.
//
// `accumulate == true` adds into `c`; otherwise `c` is overwritten. Shapes are
// checked by the dispatching overloads only.

namespace contravirt::kernels {

namespace serial {
void gemm_nn(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate = false);
void gemm_tn(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate = false);
void gemm_nt(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate = false);
void spmm_blocks(const CsrMatrix& s, const Matrix& x, Matrix& y, bool accumulate = false);
void gram(const Matrix& x, Matrix& g);
}  // namespace serial

namespace parallel {
void gemm_nn(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate = false);
void gemm_tn(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate = false);
void gemm_nt(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate = false);
void spmm_blocks(const CsrMatrix& s, const Matrix& x, Matrix& y, bool accumulate = false);
void gram(const Matrix& x, Matrix& g);
}  // namespace parallel

/// c (+)= a * b
void gemm_nn(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate = false);
/// c (+)= a^T * b
void gemm_tn(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate = false);
/// c (+)= a * b^T
void gemm_nt(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate = false);

/// Applies `s` to every consecutive block of `s.cols` rows of `x`, writing
/// blocks of `s.rows` rows into `y`. Used to propagate a stack of graph
/// snapshots through one diffusion matrix.
void spmm_blocks(const CsrMatrix& s, const Matrix& x, Matrix& y, bool accumulate = false);

/// g = x^T x (symmetric).
void gram(const Matrix& x, Matrix& g);

/// Work (multiply-adds) above which the dispatchers pick the OpenMP path.
inline constexpr std::size_t kParallelThreshold = 1u << 16;

int max_threads();

}  // namespace contravirt::kernels
