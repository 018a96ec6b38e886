#pragma once

// Small instances and independent reference computations shared by the unit
// tests and the acceptance harness. Nothing here calls the code under test to
// produce an expected value.

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "contravirt/encoder.hpp"
#include "contravirt/geo_graph.hpp"
#include "contravirt/matrix.hpp"
#include "contravirt/pipeline.hpp"
#include "contravirt/run_config.hpp"

namespace toy {

using contravirt::Matrix;

/// 2x3 grid with five stations, one withheld: four real nodes, one test
/// replacement and one empty cell, so six nodes of which two are virtual.
inline contravirt::config::RunConfig six_node_config() {
  contravirt::config::RunConfig c;
  contravirt::data::SyntheticConfig s;
  s.grid = {51.0, 52.0, 4.0, 5.5, 2, 3};
  s.n_real = 5;
  s.n_withheld = 1;
  s.steps = 160;
  s.latent_sources = 4;
  s.seed = 11;
  c.data.synthetic = s;
  c.grid = s.grid;
  c.windows.t_in = 4;
  c.windows.t_out = 2;
  c.contrastive.offset = 2;
  c.windows.train_stride = 2;
  c.windows.eval_stride = 4;
  c.model.embed_dim = 5;
  c.model.type_dim = 2;
  c.train.batch_size = 4;
  c.train.max_epochs = 2;
  c.output_dir = "runs/toy";
  return c;
}

inline contravirt::model::ModelDims dims_for(const contravirt::pipeline::Prepared& p) {
  contravirt::model::ModelDims d;
  d.nodes = p.meta.nodes;
  d.n_virtual = p.meta.n_virtual;
  d.type_dim = p.cfg.model.type_dim;
  d.embed_dim = p.cfg.model.embed_dim;
  d.t_in = p.cfg.windows.t_in;
  d.t_out = p.cfg.windows.t_out;
  return d;
}

inline Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(r, c);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = u(rng);
  return m;
}

/// Random connected-ish undirected graph: a ring plus random chords.
inline Matrix random_adjacency(std::size_t n, std::mt19937_64& rng, double chord_prob = 0.15) {
  Matrix a(n, n);
  std::bernoulli_distribution coin(chord_prob);
  for (std::size_t i = 0; i < n; ++i) {
    if (n > 1) {
      const std::size_t j = (i + 1) % n;
      if (j != i) a(i, j) = a(j, i) = 1.0;
    }
    for (std::size_t j = i + 2; j < n; ++j)
      if (coin(rng)) a(i, j) = a(j, i) = 1.0;
  }
  return a;
}

/// Row-stochastic D^-1 (A + I), written out independently.
inline Matrix reference_transition(const Matrix& a) {
  const std::size_t n = a.rows();
  Matrix t(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    double deg = 1.0;
    for (std::size_t j = 0; j < n; ++j) deg += a(i, j);
    for (std::size_t j = 0; j < n; ++j) t(i, j) = (a(i, j) + (i == j ? 1.0 : 0.0)) / deg;
  }
  return t;
}

/// alpha * sum_{k=0}^{terms} (1 - alpha)^k T^k.
inline Matrix neumann_ppr(const Matrix& t, double alpha, std::size_t terms = 1000) {
  const std::size_t n = t.rows();
  Matrix power = Matrix::identity(n);
  Matrix acc(n, n);
  double coef = alpha;
  for (std::size_t k = 0; k <= terms; ++k) {
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += coef * power[i];
    Matrix next(n, n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t l = 0; l < n; ++l) {
        const double v = power(i, l);
        if (v == 0.0) continue;
        for (std::size_t j = 0; j < n; ++j) next(i, j) += v * t(l, j);
      }
    power = std::move(next);
    coef *= 1.0 - alpha;
  }
  return acc;
}

inline double cosine(std::span<const double> a, std::span<const double> b) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  return ab / std::sqrt(aa * bb);
}

/// Mean over queries of -log(exp(s_pos) / (exp(s_pos) + sum_j exp(s_j))) with
/// s = cos / tau, evaluated term by term. `literal` drops exp(s_pos) from the
/// denominator.
inline double brute_infonce(const Matrix& q, const Matrix& k, const std::vector<std::size_t>& positive,
                            const Matrix& queue, double tau, bool literal = false) {
  double total = 0.0;
  for (std::size_t i = 0; i < q.rows(); ++i) {
    const double pos = std::exp(cosine(q.row(i), k.row(positive[i])) / tau);
    double denom = literal ? 0.0 : pos;
    for (std::size_t j = 0; j < queue.rows(); ++j) denom += std::exp(cosine(q.row(i), queue.row(j)) / tau);
    total += -std::log(pos / denom);
  }
  return total / static_cast<double>(q.rows());
}

}  // namespace toy
