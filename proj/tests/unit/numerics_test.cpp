#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <omp.h>

#include <cmath>
#include <memory>
#include <random>

#include "contravirt/autodiff.hpp"
#include "contravirt/errors.hpp"
#include "contravirt/kernels.hpp"
#include "contravirt/linalg.hpp"
#include "toy.hpp"

using namespace contravirt;
using ad::Parameter;
using ad::Tape;
using ad::Var;

namespace {

double grad_error(const ad::LossFn& f, std::vector<Parameter*> params) {
  return ad::check_gradients(f, params, 1e-6, 1e-7);
}

CsrMatrix random_csr(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  Matrix d = toy::random_matrix(rows, cols, rng);
  for (std::size_t i = 0; i < d.size(); ++i)
    if (std::abs(d[i]) < 0.5) d[i] = 0.0;
  return CsrMatrix::from_dense(d);
}

}  // namespace

TEST_CASE("matmul hand examples") {
  const Matrix m{{1, 2}, {3, 4}};
  CHECK(Matrix::identity(2) * m == m);
  const Matrix v{{0}, {1}};
  CHECK(m * v == Matrix{{2}, {4}});
  CHECK_THROWS_AS(m * Matrix(3, 1), DimensionError);
}

TEST_CASE("serial and parallel kernels agree bitwise") {
  omp_set_num_threads(4);
  std::mt19937_64 rng(3);
  const Matrix a = toy::random_matrix(97, 41, rng);
  const Matrix b = toy::random_matrix(41, 33, rng);
  const Matrix bt = toy::random_matrix(33, 41, rng);
  const Matrix c = toy::random_matrix(97, 33, rng);
  Matrix s1, p1;
  kernels::serial::gemm_nn(a, b, s1);
  kernels::parallel::gemm_nn(a, b, p1);
  CHECK(s1 == p1);
  kernels::serial::gemm_tn(a, c, s1);
  kernels::parallel::gemm_tn(a, c, p1);
  CHECK(s1 == p1);
  kernels::serial::gemm_nt(a, bt, s1);
  kernels::parallel::gemm_nt(a, bt, p1);
  CHECK(s1 == p1);
  const CsrMatrix s = random_csr(7, 7, rng);
  const Matrix x = toy::random_matrix(7 * 12, 5, rng);
  kernels::serial::spmm_blocks(s, x, s1);
  kernels::parallel::spmm_blocks(s, x, p1);
  CHECK(s1 == p1);
  kernels::serial::gram(a, s1);
  kernels::parallel::gram(a, p1);
  CHECK(s1 == p1);

  // Accumulating variants add onto the existing contents.
  Matrix acc = c;
  kernels::gemm_nn(a, b, acc, true);
  CHECK(max_abs_diff(acc, c + a * b) < 1e-12);
}

TEST_CASE("spmm_blocks matches a dense product per block") {
  std::mt19937_64 rng(5);
  const CsrMatrix s = random_csr(4, 4, rng);
  const Matrix x = toy::random_matrix(12, 3, rng);
  Matrix y;
  kernels::spmm_blocks(s, x, y);
  const Matrix sd = s.to_dense();
  for (std::size_t blk = 0; blk < 3; ++blk) {
    Matrix xb(4, 3);
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 3; ++j) xb(i, j) = x(blk * 4 + i, j);
    const Matrix ref = sd * xb;
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 3; ++j) CHECK(y(blk * 4 + i, j) == doctest::Approx(ref(i, j)).epsilon(1e-14));
  }
}

TEST_CASE("LU and Cholesky solves") {
  std::mt19937_64 rng(9);
  Matrix a = toy::random_matrix(6, 6, rng);
  for (std::size_t i = 0; i < 6; ++i) a(i, i) += 4.0;
  const Matrix x = toy::random_matrix(6, 2, rng);
  const Matrix b = a * x;
  linalg::LuFactorization lu(a);
  CHECK(max_abs_diff(lu.solve(b), x) < 1e-12);
  CHECK(max_abs_diff(lu.inverse() * a, Matrix::identity(6)) < 1e-12);
  CHECK(linalg::condition_number_1(a, lu.inverse()) >= 1.0);

  const Matrix spd = transpose(a) * a + Matrix::identity(6);
  CHECK(max_abs_diff(linalg::cholesky_solve(spd, spd * x), x) < 1e-10);
  CHECK_THROWS_AS(linalg::LuFactorization(Matrix(3, 3)), NumericalError);
  CHECK_THROWS_AS(linalg::cholesky_solve(Matrix{{1, 2}, {2, 1}}, Matrix(2, 1)), NumericalError);
}

TEST_CASE("elementwise primitives") {
  Tape t;
  Var x = t.constant(Matrix{{-1, 0, 2}});
  CHECK(ad::relu(x).value() == Matrix{{0, 0, 2}});
  CHECK(ad::exp(t.constant(Matrix{{0}})).value()(0, 0) == 1.0);
  CHECK_THROWS_AS(ad::log(t.constant(Matrix{{0}})), DomainError);

  Parameter p("p", Matrix{{2, -1}});
  Tape t2;
  Var y = ad::sum(ad::relu(t2.parameter(p)));
  t2.backward(y);
  CHECK(p.grad == Matrix{{1, 0}});
}

TEST_CASE("backward on hand examples") {
  Parameter x("x", Matrix{{3}});
  {
    Tape t;
    Var v = t.parameter(x);
    t.backward(ad::mul(v, v));
  }
  CHECK(x.grad(0, 0) == 6.0);

  // A parameter reached through two paths collects both contributions.
  x.zero_grad();
  {
    Tape t;
    Var v = t.parameter(x);
    t.backward(ad::add(ad::scale(v, 2.0), ad::scale(v, 5.0)));
  }
  CHECK(x.grad(0, 0) == 7.0);
}

TEST_CASE("analytic gradients match central differences") {
  std::mt19937_64 rng(21);
  Parameter a("a", toy::random_matrix(4, 3, rng));
  Parameter b("b", toy::random_matrix(3, 5, rng));
  Parameter r("r", toy::random_matrix(1, 5, rng));
  Parameter w("w", toy::random_matrix(3, 3, rng, 0.2, 1.0));
  const Matrix xin = toy::random_matrix(3, 2, rng);

  SUBCASE("matmul") {
    CHECK(grad_error([&](Tape& t) { return ad::sum(ad::matmul(t.parameter(a), t.parameter(b))); }, {&a, &b}) < 1e-6);
  }
  SUBCASE("sum relu(Wx)") {
    CHECK(grad_error([&](Tape& t) { return ad::sum(ad::relu(ad::matmul(t.parameter(w), t.constant(xin)))); }, {&w}) <
          1e-4);
  }
  SUBCASE("quadratic") {
    const double err = ad::check_gradients(
        [&](Tape& t) {
          Var v = t.parameter(a);
          return ad::sum(ad::mul(v, v));
        },
        std::vector<Parameter*>{&a});
    CHECK(err < 1e-8);
  }
  SUBCASE("row broadcast, exp, log, mean") {
    CHECK(grad_error(
              [&](Tape& t) {
                Var z = ad::add_row(ad::matmul(t.parameter(a), t.parameter(b)), t.parameter(r));
                return ad::mean(ad::log(ad::add(ad::exp(z), t.constant(Matrix(4, 5, 1.0)))));
              },
              {&a, &b, &r}) < 1e-6);
  }
  SUBCASE("normalisation, dots and cross entropy") {
    CHECK(grad_error(
              [&](Tape& t) {
                Var qa = ad::l2_normalize_rows(t.parameter(a));
                Var logits = ad::matmul_nt(qa, ad::l2_normalize_rows(ad::matmul(t.parameter(a), t.parameter(w))));
                Var ce = ad::cross_entropy_rows(ad::scale(logits, 1.0 / 0.07), {0, 2, 1, 3});
                Var ce2 = ad::cross_entropy_rows(logits, {1, 1, 0, 2}, true);
                return ad::add(ad::add(ce, ce2), ad::mean(ad::row_dot(qa, qa)));
              },
              {&a, &w}) < 1e-6);
  }
  SUBCASE("gather, slices and concatenation") {
    CHECK(grad_error(
              [&](Tape& t) {
                Var pa = t.parameter(a);
                Var g = ad::gather_rows(pa, {3, -1, 0, 3});
                Var parts[] = {ad::slice_cols(g, 0, 2), ad::slice_rows(ad::matmul(pa, t.parameter(b)), 0, 4)};
                Var c = ad::concat_cols(parts);
                Var rows[] = {c, ad::scale(c, -0.5)};
                Var all = ad::concat_rows(rows);
                return ad::sum(ad::mul(all, all));
              },
              {&a, &b}) < 1e-6);
  }
  SUBCASE("sparse blocks, temporal mean and step broadcast") {
    auto s = std::make_shared<const ad::SharedCsr>(random_csr(2, 2, rng));
    Parameter x("x", toy::random_matrix(2 * 3 * 2, 3, rng));  // outer 2, steps 3, width 2
    Parameter e("e", toy::random_matrix(2 * 2, 3, rng));
    CHECK(grad_error(
              [&](Tape& t) {
                Var z = ad::add_broadcast_steps(ad::spmm_blocks(s, t.parameter(x)), t.parameter(e), 3, 2);
                Var m = ad::block_mean(ad::relu(z), 3, 2);
                return ad::sum(ad::mul(m, m));
              },
              {&x, &e}) < 1e-6);
  }
}

TEST_CASE("step broadcast is the adjoint of the temporal sum") {
  std::mt19937_64 rng(4);
  Tape t;
  const Matrix a = toy::random_matrix(2 * 4 * 3, 2, rng);
  const Matrix e = toy::random_matrix(2 * 3, 2, rng);
  const Matrix out = ad::add_broadcast_steps(t.constant(a), t.constant(e), 4, 3).value();
  for (std::size_t o = 0; o < 2; ++o)
    for (std::size_t s = 0; s < 4; ++s)
      for (std::size_t w = 0; w < 3; ++w)
        for (std::size_t j = 0; j < 2; ++j) {
          const std::size_t r = (o * 4 + s) * 3 + w;
          CHECK(out(r, j) == a(r, j) + e(o * 3 + w, j));
        }
  CHECK_THROWS_AS(ad::add_broadcast_steps(t.constant(a), t.constant(Matrix(5, 2)), 4, 3), DimensionError);
}

TEST_CASE("row normalisation keeps zero rows at zero") {
  Parameter p("p", Matrix{{3, 4}, {0, 0}});
  Tape t;
  Var y = ad::l2_normalize_rows(t.parameter(p));
  CHECK(max_abs_diff(y.value(), Matrix{{0.6, 0.8}, {0, 0}}) < 1e-15);
  t.backward(ad::sum(ad::mul(y, t.constant(Matrix{{1, 0}, {1, 1}}))));
  CHECK(p.grad(0, 0) == doctest::Approx(0.64 / 5.0));
  CHECK(std::isfinite(p.grad(1, 0)));
}

TEST_CASE("check_gradients rejects a zero step") {
  Parameter p("p", Matrix{{1}});
  std::vector<Parameter*> ps{&p};
  CHECK_THROWS_AS(ad::check_gradients([&](Tape& t) { return ad::sum(t.parameter(p)); }, ps, 0.0), ContractError);
}

TEST_CASE("frozen parameters receive no gradient") {
  Parameter p("p", Matrix{{1, 2}});
  Parameter q("q", Matrix{{3, 4}});
  Tape t;
  Var l = ad::sum(ad::mul(t.parameter(p), t.frozen(q)));
  t.backward(l);
  CHECK(p.grad == Matrix{{3, 4}});
  CHECK((q.grad.empty() || q.grad == Matrix(1, 2)));
}
