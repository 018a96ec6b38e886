#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "contravirt/diffusion.hpp"
#include "contravirt/errors.hpp"
#include "toy.hpp"

using namespace contravirt;
using namespace contravirt::diffusion;

namespace {
constexpr NodeKind R = NodeKind::Real;
constexpr NodeKind V = NodeKind::Virtual;
}  // namespace

TEST_CASE("transition matrix") {
  CHECK(transition(Matrix{{0}}) == Matrix{{1}});
  CHECK(transition(Matrix{{0, 1}, {1, 0}}) == Matrix{{0.5, 0.5}, {0.5, 0.5}});
  std::mt19937_64 rng(1);
  const Matrix t = transition(toy::random_adjacency(10, rng, 0.3));
  for (std::size_t i = 0; i < 10; ++i) {
    double s = 0.0;
    for (double v : t.row(i)) s += v;
    CHECK(std::abs(s - 1.0) < 1e-12);
  }
}

TEST_CASE("personalized PageRank") {
  CHECK(max_abs_diff(ppr(Matrix{{1}}, 0.15), Matrix{{1}}) < 1e-15);
  CHECK(max_abs_diff(ppr(Matrix{{1}}, 0.7), Matrix{{1}}) < 1e-15);

  std::mt19937_64 rng(2);
  const Matrix t = transition(toy::random_adjacency(8, rng, 0.4));
  const Matrix near_identity = ppr(t, 0.999);
  for (std::size_t i = 0; i < 8; ++i)
    for (std::size_t j = 0; j < 8; ++j)
      if (i != j) CHECK(near_identity(i, j) < 1e-2);

  const Matrix path{{0, 1, 0, 0}, {1, 0, 1, 0}, {0, 1, 0, 1}, {0, 0, 1, 0}};
  const Matrix tp = transition(path);
  CHECK(max_abs_diff(ppr(tp, 0.15), toy::neumann_ppr(tp, 0.15)) < 1e-10);

  CHECK_THROWS_AS(ppr(tp, 0.0), ConfigError);
  CHECK_THROWS_AS(ppr(tp, 1.0), ConfigError);
}

TEST_CASE("PPR equals the Neumann series on random graphs") {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<std::size_t> size(2, 50);
  for (int g = 0; g < 20; ++g) {
    const Matrix t = transition(toy::random_adjacency(size(rng), rng));
    for (double alpha : {0.05, 0.15, 0.5}) CHECK(max_abs_diff(ppr(t, alpha), toy::neumann_ppr(t, alpha)) < 1e-10);
  }
}

TEST_CASE("type reweighting") {
  const Matrix d{{0.2, 0.2}, {0.2, 0.2}};
  const std::vector<NodeKind> rr{R, R}, rv{R, V}, vv{V, V};
  CHECK(reweight(d, rr, 3.0, 0.3)(0, 1) == 0.2);
  CHECK(reweight(d, rv, 3.0, 0.3)(0, 1) == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(reweight(d, rv, 3.0, 0.3)(1, 0) == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(reweight(d, vv, 3.0, 0.3)(0, 1) == doctest::Approx(0.06).epsilon(1e-15));
  CHECK(type_weight(R, V, 3.0, 0.3) == type_weight(V, R, 3.0, 0.3));
}

TEST_CASE("top-k sparsification") {
  const Matrix row{{0.5, 0.3, 0.1, 0.1}};
  Matrix sq(4, 4);
  for (std::size_t j = 0; j < 4; ++j) sq(0, j) = row(0, j);
  for (std::size_t i = 1; i < 4; ++i) sq(i, i) = 1.0;
  const auto s = sparsify_topk(sq, 2, true);
  REQUIRE(s.rows[0].size() == 2);
  CHECK(s.rows[0][0].col == 0);
  CHECK(s.rows[0][1].col == 1);
  CHECK(s.rows[0][0].weight == doctest::Approx(0.625).epsilon(1e-15));
  CHECK(s.rows[0][1].weight == doctest::Approx(0.375).epsilon(1e-15));

  // Ties at the cut keep the lower column.
  const auto tie = sparsify_topk(sq, 3, false);
  REQUIRE(tie.rows[0].size() == 3);
  CHECK(tie.rows[0][2].col == 2);

  const auto all = sparsify_topk(sq, 8, true);
  CHECK(all.rows[0].size() == 4);
  CHECK(all.rows[0][0].weight == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(DiffusionParams{}.top_k == 8);
}

TEST_CASE("influence statistics") {
  SparseDiffusionMatrix s;
  s.n = 3;
  s.normalized = true;
  s.rows = {{{0, 1.0}}, {{0, 1.0}}, {{0, 0.25}, {2, 0.75}}};
  const std::vector<NodeKind> kinds{R, V, V};
  const auto rec = influence_stats(s, kinds);
  REQUIRE(rec.size() == 2);
  CHECK(rec[0].real_fraction == 1.0);
  CHECK(rec[1].real_fraction == 0.25);
  CHECK(rec[1].top1_real_share == 0.25);
  CHECK(rec[1].count_real_sources == 1);
  s.normalized = false;
  CHECK_THROWS_AS(influence_stats(s, kinds), ContractError);
}

TEST_CASE("full build keeps at most k entries per row, renormalised") {
  std::mt19937_64 rng(8);
  const Matrix a = toy::random_adjacency(30, rng, 0.2);
  std::vector<NodeKind> kinds;
  for (std::size_t i = 0; i < 30; ++i) kinds.push_back(i % 3 == 0 ? R : V);
  const auto s = build(a, kinds, DiffusionParams{});
  CHECK(s.max_row_entries() <= 8);
  for (const auto& row : s.rows) {
    double sum = 0.0;
    for (const auto& e : row) sum += e.weight;
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  }
  const std::string csv = edge_list_csv(s, kinds);
  CHECK(csv.rfind("src,dst,weight,src_kind,dst_kind\n", 0) == 0);
}
