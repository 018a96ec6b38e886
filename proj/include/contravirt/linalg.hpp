#pragma once

#include "contravirt/matrix.hpp"

namespace contravirt::linalg {

/// LU factorisation with partial pivoting of a square matrix.
class LuFactorization {
 public:
  /// Throws NumericalError when a pivot vanishes.
  explicit LuFactorization(Matrix a);

  /// Solves A X = B for a block of right-hand sides.
  Matrix solve(const Matrix& b) const;
  Matrix inverse() const;

  std::size_t size() const { return lu_.rows(); }

 private:
  Matrix lu_;
  std::vector<std::size_t> perm_;
};

/// 1-norm condition number computed from the explicit inverse. Intended for
/// the small systems (a few hundred unknowns) this library solves.
double condition_number_1(const Matrix& a, const Matrix& a_inverse);
double norm_1(const Matrix& a);

/// Solves the symmetric positive definite system A X = B by Cholesky.
/// Throws NumericalError when A is not positive definite.
Matrix cholesky_solve(const Matrix& a, const Matrix& b);

}  // namespace contravirt::linalg
