#include "contravirt/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "contravirt/errors.hpp"
#include "contravirt/format.hpp"
#include "contravirt/linalg.hpp"

namespace contravirt::diffusion {

void DiffusionParams::validate() const {
  if (!(alpha_ppr > 0.0 && alpha_ppr < 1.0)) throw ConfigError("alpha_ppr must lie strictly inside (0, 1)");
  if (!(gamma > 0.0) || !(delta > 0.0)) throw ConfigError("gamma and delta must be positive");
  if (top_k < 1) throw ConfigError("top_k must be at least 1");
}

Matrix transition(const Matrix& adjacency) {
  const std::size_t n = adjacency.rows();
  if (adjacency.cols() != n) throw DimensionError("adjacency must be square");
  Matrix t(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    double deg = 1.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (adjacency(i, j) < 0.0) throw ContractError("adjacency weights must be non-negative");
      deg += adjacency(i, j);
    }
    for (std::size_t j = 0; j < n; ++j) t(i, j) = (adjacency(i, j) + (i == j ? 1.0 : 0.0)) / deg;
  }
  return t;
}

Matrix ppr(const Matrix& transition, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("alpha_ppr must lie strictly inside (0, 1)");
  const std::size_t n = transition.rows();
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) m(i, j) = (i == j ? 1.0 : 0.0) - (1.0 - alpha) * transition(i, j);
  Matrix inv;
  try {
    inv = linalg::LuFactorization(m).inverse();
  } catch (const NumericalError& e) {
    throw NumericalError(std::string("PPR system is singular (condition estimate inf): ") + e.what());
  }
  const double cond = linalg::condition_number_1(m, inv);
  if (!std::isfinite(cond) || cond > 1e14) {
    throw NumericalError("PPR system is ill-conditioned (condition estimate " + format_double(cond) + ")");
  }
  for (auto& v : inv.values()) v *= alpha;
  return inv;
}

double type_weight(NodeKind row_kind, NodeKind col_kind, double gamma, double delta) {
  const bool ri = row_kind == NodeKind::Real, rj = col_kind == NodeKind::Real;
  if (ri && rj) return 1.0;
  if (ri != rj) return gamma;
  return delta;
}

Matrix reweight(const Matrix& d_ppr, std::span<const NodeKind> kinds, double gamma, double delta) {
  if (kinds.size() != d_ppr.rows() || d_ppr.rows() != d_ppr.cols()) {
    throw DimensionError("reweight: kinds length must match the matrix order");
  }
  Matrix out = d_ppr;
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) *= type_weight(kinds[i], kinds[j], gamma, delta);
  return out;
}

CsrMatrix SparseDiffusionMatrix::to_csr() const {
  CsrMatrix c;
  c.rows = n;
  c.cols = n;
  c.row_ptr.assign(1, 0);
  for (const auto& row : rows) {
    for (const auto& e : row) {
      c.col_idx.push_back(e.col);
      c.values.push_back(e.weight);
    }
    c.row_ptr.push_back(c.col_idx.size());
  }
  return c;
}

Matrix SparseDiffusionMatrix::to_dense() const { return to_csr().to_dense(); }

std::size_t SparseDiffusionMatrix::max_row_entries() const {
  std::size_t m = 0;
  for (const auto& r : rows) m = std::max(m, r.size());
  return m;
}

SparseDiffusionMatrix sparsify_topk(const Matrix& d, std::size_t k, bool renormalize) {
  if (k < 1) throw ConfigError("top_k must be at least 1");
  SparseDiffusionMatrix s;
  s.n = d.rows();
  s.normalized = renormalize;
  s.rows.resize(s.n);
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < s.n; ++i) {
    order.clear();
    for (std::size_t j = 0; j < d.cols(); ++j)
      if (d(i, j) > 0.0) order.push_back(j);
    const std::size_t take = std::min(k, order.size());
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take), order.end(),
                      [&](std::size_t a, std::size_t b) { return d(i, a) > d(i, b) || (d(i, a) == d(i, b) && a < b); });
    order.resize(take);
    std::sort(order.begin(), order.end());
    double total = 0.0;
    for (std::size_t j : order) total += d(i, j);
    for (std::size_t j : order) s.rows[i].push_back({j, renormalize ? d(i, j) / total : d(i, j)});
  }
  return s;
}

SparseDiffusionMatrix from_dense(const Matrix& m, bool normalized) {
  SparseDiffusionMatrix s;
  s.n = m.rows();
  s.normalized = normalized;
  s.rows.resize(s.n);
  for (std::size_t i = 0; i < s.n; ++i)
    for (std::size_t j = 0; j < m.cols(); ++j)
      if (m(i, j) != 0.0) s.rows[i].push_back({j, m(i, j)});
  return s;
}

SparseDiffusionMatrix build(const Matrix& adjacency, std::span<const NodeKind> kinds, const DiffusionParams& p) {
  p.validate();
  const Matrix d = ppr(transition(adjacency), p.alpha_ppr);
  return sparsify_topk(reweight(d, kinds, p.gamma, p.delta), p.top_k, p.renormalize);
}

std::vector<InfluenceRecord> influence_stats(const SparseDiffusionMatrix& s, std::span<const NodeKind> kinds) {
  if (!s.normalized) throw ContractError("influence_stats requires a row-normalised diffusion matrix");
  if (kinds.size() != s.n) throw DimensionError("influence_stats: kinds length mismatch");
  std::vector<InfluenceRecord> out;
  for (std::size_t i = 0; i < s.n; ++i) {
    if (kinds[i] != NodeKind::Virtual) continue;
    InfluenceRecord rec;
    rec.node = i;
    rec.empty_row = s.rows[i].empty();
    for (const auto& e : s.rows[i]) {
      if (kinds[e.col] != NodeKind::Real || !(e.weight > 0.0)) continue;
      rec.real_fraction += e.weight;
      rec.top1_real_share = std::max(rec.top1_real_share, e.weight);
      ++rec.count_real_sources;
    }
    out.push_back(rec);
  }
  return out;
}

std::string edge_list_csv(const SparseDiffusionMatrix& s, std::span<const NodeKind> kinds) {
  std::ostringstream out;
  out << "src,dst,weight,src_kind,dst_kind\n";
  for (std::size_t i = 0; i < s.n; ++i)
    for (const auto& e : s.rows[i])
      out << i << ',' << e.col << ',' << format_double(e.weight) << ',' << geo::to_string(kinds[i]) << ','
          << geo::to_string(kinds[e.col]) << '\n';
  return out.str();
}

std::string influence_csv(std::span<const InfluenceRecord> records) {
  std::ostringstream out;
  out << "node,real_fraction,top1_real_share,count_real_sources,empty_row\n";
  for (const auto& r : records)
    out << r.node << ',' << format_double(r.real_fraction) << ',' << format_double(r.top1_real_share) << ','
        << r.count_real_sources << ',' << (r.empty_row ? 1 : 0) << '\n';
  return out.str();
}

}  // namespace contravirt::diffusion
