#include "contravirt/linalg.hpp"

#include <cmath>
#include <utility>

#include "contravirt/errors.hpp"

namespace contravirt::linalg {

LuFactorization::LuFactorization(Matrix a) : lu_(std::move(a)) {
  const std::size_t n = lu_.rows();
  if (lu_.cols() != n) throw DimensionError("LU needs a square matrix, got " + lu_.shape_string());
  perm_.resize(n);
  for (std::size_t i = 0; i < n; ++i) perm_[i] = i;
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t piv = k;
    double best = std::abs(lu_(k, k));
    for (std::size_t r = k + 1; r < n; ++r) {
      if (std::abs(lu_(r, k)) > best) {
        best = std::abs(lu_(r, k));
        piv = r;
      }
    }
    if (!(best > 0.0)) throw NumericalError("singular matrix: zero pivot at column " + std::to_string(k));
    if (piv != k) {
      for (std::size_t c = 0; c < n; ++c) std::swap(lu_(k, c), lu_(piv, c));
      std::swap(perm_[k], perm_[piv]);
    }
    const double inv = 1.0 / lu_(k, k);
    for (std::size_t r = k + 1; r < n; ++r) {
      const double f = lu_(r, k) * inv;
      lu_(r, k) = f;
      if (f == 0.0) continue;
      for (std::size_t c = k + 1; c < n; ++c) lu_(r, c) -= f * lu_(k, c);
    }
  }
}

Matrix LuFactorization::solve(const Matrix& b) const {
  const std::size_t n = lu_.rows();
  if (b.rows() != n) throw DimensionError("LU solve: rhs has " + std::to_string(b.rows()) + " rows");
  const std::size_t m = b.cols();
  Matrix x(n, m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) x(i, j) = b(perm_[i], j);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < i; ++k) {
      const double f = lu_(i, k);
      if (f == 0.0) continue;
      for (std::size_t j = 0; j < m; ++j) x(i, j) -= f * x(k, j);
    }
  for (std::size_t i = n; i-- > 0;) {
    for (std::size_t k = i + 1; k < n; ++k) {
      const double f = lu_(i, k);
      if (f == 0.0) continue;
      for (std::size_t j = 0; j < m; ++j) x(i, j) -= f * x(k, j);
    }
    const double inv = 1.0 / lu_(i, i);
    for (std::size_t j = 0; j < m; ++j) x(i, j) *= inv;
  }
  return x;
}

Matrix LuFactorization::inverse() const { return solve(Matrix::identity(lu_.rows())); }

double norm_1(const Matrix& a) {
  double best = 0.0;
  for (std::size_t c = 0; c < a.cols(); ++c) {
    double s = 0.0;
    for (std::size_t r = 0; r < a.rows(); ++r) s += std::abs(a(r, c));
    best = std::max(best, s);
  }
  return best;
}

double condition_number_1(const Matrix& a, const Matrix& a_inverse) { return norm_1(a) * norm_1(a_inverse); }

Matrix cholesky_solve(const Matrix& a, const Matrix& b) {
  const std::size_t n = a.rows();
  if (a.cols() != n || b.rows() != n) throw DimensionError("cholesky_solve shape mismatch");
  Matrix l(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    double d = a(j, j);
    for (std::size_t k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
    if (!(d > 0.0)) throw NumericalError("matrix is not positive definite at column " + std::to_string(j));
    const double ljj = std::sqrt(d);
    l(j, j) = ljj;
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = a(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      l(i, j) = s / ljj;
    }
  }
  const std::size_t m = b.cols();
  Matrix x = b;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < i; ++k)
      for (std::size_t j = 0; j < m; ++j) x(i, j) -= l(i, k) * x(k, j);
    for (std::size_t j = 0; j < m; ++j) x(i, j) /= l(i, i);
  }
  for (std::size_t i = n; i-- > 0;) {
    for (std::size_t k = i + 1; k < n; ++k)
      for (std::size_t j = 0; j < m; ++j) x(i, j) -= l(k, i) * x(k, j);
    for (std::size_t j = 0; j < m; ++j) x(i, j) /= l(i, i);
  }
  return x;
}

}  // namespace contravirt::linalg
