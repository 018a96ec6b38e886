#pragma once

#include <span>
#include <string>
#include <vector>

#include "contravirt/geo_graph.hpp"
#include "contravirt/matrix.hpp"

// Personalized-PageRank diffusion over the base graph, type-aware edge
// reweighting, top-k sparsification and influence statistics.

namespace contravirt::diffusion {

using geo::NodeKind;

struct DiffusionParams {
  double alpha_ppr = 0.15;  ///< teleport probability, strictly inside (0, 1)
  double gamma = 3.0;       ///< real <-> virtual multiplier
  double delta = 0.3;       ///< virtual <-> virtual multiplier
  std::size_t top_k = 8;
  bool renormalize = true;

  void validate() const;
};

/// T = D^-1 (A + I). Rows sum to one.
Matrix transition(const Matrix& adjacency);

/// alpha (I - (1 - alpha) T)^-1 via a dense LU solve. Throws NumericalError
/// (with the 1-norm condition estimate) when the system is singular or
/// hopelessly ill-conditioned.
Matrix ppr(const Matrix& transition, double alpha);

/// Weight applied to entry (i, j): 1 real-real, gamma mixed, delta virtual-virtual.
double type_weight(NodeKind row_kind, NodeKind col_kind, double gamma, double delta);
Matrix reweight(const Matrix& d_ppr, std::span<const NodeKind> kinds, double gamma, double delta);

struct Entry {
  std::size_t col = 0;
  double weight = 0.0;
};

/// Row-indexed sparse diffusion weights with at most `top_k` entries per row.
struct SparseDiffusionMatrix {
  std::size_t n = 0;
  std::vector<std::vector<Entry>> rows;  ///< each row sorted by ascending column
  bool normalized = false;

  CsrMatrix to_csr() const;
  Matrix to_dense() const;
  std::size_t max_row_entries() const;
};

/// Keeps the k largest positive entries of each row (ties by lower column).
SparseDiffusionMatrix sparsify_topk(const Matrix& d, std::size_t k, bool renormalize);

/// Every nonzero of `m` with no selection; used for the plain-graph ablation.
SparseDiffusionMatrix from_dense(const Matrix& m, bool normalized);

/// transition -> ppr -> reweight -> sparsify_topk.
SparseDiffusionMatrix build(const Matrix& adjacency, std::span<const NodeKind> kinds, const DiffusionParams& p);

struct InfluenceRecord {
  std::size_t node = 0;
  double real_fraction = 0.0;      ///< total weight arriving from real columns
  double top1_real_share = 0.0;    ///< largest single real column weight
  std::size_t count_real_sources = 0;
  bool empty_row = false;
};

/// One record per virtual node. Requires a row-normalised matrix.
std::vector<InfluenceRecord> influence_stats(const SparseDiffusionMatrix& s, std::span<const NodeKind> kinds);

/// src,dst,weight,src_kind,dst_kind
std::string edge_list_csv(const SparseDiffusionMatrix& s, std::span<const NodeKind> kinds);
/// node,real_fraction,top1_real_share,count_real_sources,empty_row
std::string influence_csv(std::span<const InfluenceRecord> records);

}  // namespace contravirt::diffusion
