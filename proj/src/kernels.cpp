#include "contravirt/kernels.hpp"

#include <algorithm>
#include <omp.h>

#include "contravirt/errors.hpp"

namespace contravirt::kernels {

namespace {

void prepare(Matrix& c, std::size_t rows, std::size_t cols, bool accumulate) {
  if (accumulate) {
    if (c.rows() != rows || c.cols() != cols) {
      throw DimensionError("accumulation target has shape " + c.shape_string());
    }
  } else if (c.rows() != rows || c.cols() != cols) {
    c = Matrix(rows, cols);
  } else {
    c.fill(0.0);
  }
}

constexpr std::size_t kRowChunk = 256;

}  // namespace

namespace serial {

void gemm_nn(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate) {
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  prepare(c, n, m, accumulate);
  for (std::size_t i = 0; i < n; ++i) {
    double* ci = c.data() + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a(i, p);
      const double* bp = b.data() + p * m;
      for (std::size_t j = 0; j < m; ++j) ci[j] += av * bp[j];
    }
  }
}

void gemm_tn(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate) {
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  prepare(c, k, m, accumulate);
  for (std::size_t r = 0; r < n; ++r) {
    const double* br = b.data() + r * m;
    for (std::size_t i = 0; i < k; ++i) {
      const double av = a(r, i);
      double* ci = c.data() + i * m;
      for (std::size_t j = 0; j < m; ++j) ci[j] += av * br[j];
    }
  }
}

void gemm_nt(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate) {
  const std::size_t n = a.rows(), k = a.cols(), m = b.rows();
  prepare(c, n, m, accumulate);
  for (std::size_t i = 0; i < n; ++i) {
    const double* ai = a.data() + i * k;
    for (std::size_t j = 0; j < m; ++j) {
      const double* bj = b.data() + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
      c(i, j) += s;
    }
  }
}

void spmm_blocks(const CsrMatrix& s, const Matrix& x, Matrix& y, bool accumulate) {
  const std::size_t blocks = x.rows() / s.cols;
  const std::size_t d = x.cols();
  prepare(y, blocks * s.rows, d, accumulate);
  for (std::size_t blk = 0; blk < blocks; ++blk) {
    for (std::size_t r = 0; r < s.rows; ++r) {
      double* yr = y.data() + (blk * s.rows + r) * d;
      for (std::size_t p = s.row_ptr[r]; p < s.row_ptr[r + 1]; ++p) {
        const double w = s.values[p];
        const double* xr = x.data() + (blk * s.cols + s.col_idx[p]) * d;
        for (std::size_t j = 0; j < d; ++j) yr[j] += w * xr[j];
      }
    }
  }
}

void gram(const Matrix& x, Matrix& g) {
  const std::size_t n = x.rows(), k = x.cols();
  g = Matrix(k, k);
  for (std::size_t r = 0; r < n; ++r) {
    const double* xr = x.data() + r * k;
    for (std::size_t i = 0; i < k; ++i) {
      const double xi = xr[i];
      double* gi = g.data() + i * k;
      for (std::size_t j = i; j < k; ++j) gi[j] += xi * xr[j];
    }
  }
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < i; ++j) g(i, j) = g(j, i);
}

}  // namespace serial

namespace parallel {

void gemm_nn(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate) {
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  prepare(c, n, m, accumulate);
  const double* ad = a.data();
  const double* bd = b.data();
  double* cd = c.data();
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t ii = 0; ii < static_cast<std::ptrdiff_t>(n); ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    double* ci = cd + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ad[i * k + p];
      const double* bp = bd + p * m;
      for (std::size_t j = 0; j < m; ++j) ci[j] += av * bp[j];
    }
  }
}

void gemm_tn(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate) {
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  prepare(c, k, m, accumulate);
  const double* ad = a.data();
  const double* bd = b.data();
  double* cd = c.data();
  // Threads own disjoint output rows; each row still sums over r in ascending order.
#pragma omp parallel
  {
    const auto nt = static_cast<std::size_t>(omp_get_num_threads());
    const auto tid = static_cast<std::size_t>(omp_get_thread_num());
    const std::size_t lo = k * tid / nt, hi = k * (tid + 1) / nt;
    for (std::size_t r0 = 0; r0 < n; r0 += kRowChunk) {
      const std::size_t r1 = std::min(n, r0 + kRowChunk);
      for (std::size_t r = r0; r < r1; ++r) {
        const double* br = bd + r * m;
        for (std::size_t i = lo; i < hi; ++i) {
          const double av = ad[r * k + i];
          double* ci = cd + i * m;
          for (std::size_t j = 0; j < m; ++j) ci[j] += av * br[j];
        }
      }
    }
  }
}

void gemm_nt(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate) {
  const std::size_t n = a.rows(), k = a.cols(), m = b.rows();
  prepare(c, n, m, accumulate);
  const double* ad = a.data();
  const double* bd = b.data();
  double* cd = c.data();
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t ii = 0; ii < static_cast<std::ptrdiff_t>(n); ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    const double* ai = ad + i * k;
    for (std::size_t j = 0; j < m; ++j) {
      const double* bj = bd + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
      cd[i * m + j] += s;
    }
  }
}

void spmm_blocks(const CsrMatrix& s, const Matrix& x, Matrix& y, bool accumulate) {
  const std::size_t blocks = x.rows() / s.cols;
  const std::size_t d = x.cols();
  prepare(y, blocks * s.rows, d, accumulate);
  const std::size_t total = blocks * s.rows;
  const double* xd = x.data();
  double* yd = y.data();
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t tt = 0; tt < static_cast<std::ptrdiff_t>(total); ++tt) {
    const auto t = static_cast<std::size_t>(tt);
    const std::size_t blk = t / s.rows, r = t % s.rows;
    double* yr = yd + t * d;
    for (std::size_t p = s.row_ptr[r]; p < s.row_ptr[r + 1]; ++p) {
      const double w = s.values[p];
      const double* xr = xd + (blk * s.cols + s.col_idx[p]) * d;
      for (std::size_t j = 0; j < d; ++j) yr[j] += w * xr[j];
    }
  }
}

void gram(const Matrix& x, Matrix& g) {
  const std::size_t n = x.rows(), k = x.cols();
  g = Matrix(k, k);
  const double* xd = x.data();
  double* gd = g.data();
  // Balanced split of the upper triangle by row, rows owned by exactly one thread.
#pragma omp parallel
  {
    const auto nt = static_cast<std::size_t>(omp_get_num_threads());
    const auto tid = static_cast<std::size_t>(omp_get_thread_num());
    for (std::size_t r0 = 0; r0 < n; r0 += kRowChunk) {
      const std::size_t r1 = std::min(n, r0 + kRowChunk);
      for (std::size_t r = r0; r < r1; ++r) {
        const double* xr = xd + r * k;
        for (std::size_t i = tid; i < k; i += nt) {
          const double xi = xr[i];
          double* gi = gd + i * k;
          for (std::size_t j = i; j < k; ++j) gi[j] += xi * xr[j];
        }
      }
    }
  }
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < i; ++j) g(i, j) = g(j, i);
}

}  // namespace parallel

int max_threads() { return omp_get_max_threads(); }

namespace {
bool use_parallel(std::size_t work) { return work >= kParallelThreshold && omp_get_max_threads() > 1; }
}  // namespace

void gemm_nn(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate) {
  if (a.cols() != b.rows()) throw DimensionError("gemm_nn: " + a.shape_string() + " * " + b.shape_string());
  if (use_parallel(a.rows() * a.cols() * b.cols())) {
    parallel::gemm_nn(a, b, c, accumulate);
  } else {
    serial::gemm_nn(a, b, c, accumulate);
  }
}

void gemm_tn(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate) {
  if (a.rows() != b.rows()) throw DimensionError("gemm_tn: " + a.shape_string() + "^T * " + b.shape_string());
  if (use_parallel(a.rows() * a.cols() * b.cols())) {
    parallel::gemm_tn(a, b, c, accumulate);
  } else {
    serial::gemm_tn(a, b, c, accumulate);
  }
}

void gemm_nt(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate) {
  if (a.cols() != b.cols()) throw DimensionError("gemm_nt: " + a.shape_string() + " * " + b.shape_string() + "^T");
  if (use_parallel(a.rows() * a.cols() * b.rows())) {
    parallel::gemm_nt(a, b, c, accumulate);
  } else {
    serial::gemm_nt(a, b, c, accumulate);
  }
}

void spmm_blocks(const CsrMatrix& s, const Matrix& x, Matrix& y, bool accumulate) {
  if (s.cols == 0 || x.rows() % s.cols != 0) {
    throw DimensionError("spmm_blocks: " + std::to_string(x.rows()) + " rows not a multiple of " +
                         std::to_string(s.cols));
  }
  if (use_parallel(x.rows() / s.cols * s.nnz() * x.cols())) {
    parallel::spmm_blocks(s, x, y, accumulate);
  } else {
    serial::spmm_blocks(s, x, y, accumulate);
  }
}

void gram(const Matrix& x, Matrix& g) {
  if (use_parallel(x.rows() * x.cols() * x.cols() / 2)) {
    parallel::gram(x, g);
  } else {
    serial::gram(x, g);
  }
}

}  // namespace contravirt::kernels
