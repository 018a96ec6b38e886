#include "contravirt/objectives.hpp"

#include <algorithm>
#include <cmath>

#include "contravirt/errors.hpp"

namespace contravirt::objectives {

double cosine_sim(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("cosine_sim: length mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) throw DomainError("cosine_sim: zero vector");
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

MoCoQueue::MoCoQueue(std::size_t capacity, std::size_t dim) : capacity_(capacity), dim_(dim) {
  if (capacity == 0) throw ConfigError("queue capacity must be positive");
}

void MoCoQueue::push(const Matrix& keys) {
  if (dim_ == 0) dim_ = keys.cols();
  if (keys.cols() != dim_) throw DimensionError("queue: key width " + std::to_string(keys.cols()) + " != " + std::to_string(dim_));
  for (std::size_t r = 0; r < keys.rows(); ++r) {
    const auto row = keys.row(r);
    double nn = 0.0;
    for (double v : row) nn += v * v;
    if (!std::isfinite(nn)) throw DomainError("queue: non-finite key embedding");
    const double inv = 1.0 / std::max(std::sqrt(nn), ad::kNormFloor);
    std::vector<double> e(row.begin(), row.end());
    for (auto& v : e) v *= inv;
    entries_.push_back(std::move(e));
    if (entries_.size() > capacity_) entries_.pop_front();
  }
}

Matrix MoCoQueue::matrix() const {
  Matrix m(entries_.size(), dim_);
  for (std::size_t i = 0; i < entries_.size(); ++i) std::copy(entries_[i].begin(), entries_[i].end(), m.row(i).begin());
  return m;
}

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::None:
      return "none";
    case Strategy::Augmented:
      return "augmented";
    case Strategy::MultiStep:
      return "multistep";
  }
  return "none";
}

Strategy parse_strategy(const std::string& s) {
  if (s == "none") return Strategy::None;
  if (s == "augmented") return Strategy::Augmented;
  if (s == "multistep" || s == "multi-step") return Strategy::MultiStep;
  throw ConfigError("unknown contrastive strategy '" + s + "' (expected none, augmented, multistep)");
}

void ContrastiveConfig::validate() const {
  if (!(tau > 0.0)) throw ConfigError("tau must be positive");
  if (!(mask_ratio > 0.0 && mask_ratio < 1.0)) throw ConfigError("mask_ratio must lie in (0, 1)");
  if (offset < 1 || offset > 6) throw ConfigError("offset must lie in 1..6");
  if (queue_capacity < 1) throw ConfigError("queue capacity must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
}

Var info_nce(Var queries, Var keys, const Matrix& queue, double tau, bool literal) {
  if (!(tau > 0.0)) throw ConfigError("tau must be positive");
  if (queries.rows() != keys.rows() || queries.cols() != keys.cols()) throw DimensionError("info_nce: query/key shape mismatch");
  if (literal && queue.rows() == 0) {
    throw ConfigError("the literal denominator needs at least one queue entry");
  }
  ad::Tape& tape = queries.tape();
  Var q = ad::l2_normalize_rows(queries);
  Var k = ad::l2_normalize_rows(keys);
  Var pos = ad::row_dot(q, k);
  Var logits = pos;
  if (queue.rows() > 0) {
    if (queue.cols() != queries.cols()) throw DimensionError("info_nce: queue width mismatch");
    const Var parts[] = {pos, ad::matmul_nt(q, tape.constant(queue))};
    logits = ad::concat_cols(parts);
  }
  logits = ad::scale(logits, 1.0 / tau);
  return ad::cross_entropy_rows(logits, std::vector<std::size_t>(queries.rows(), 0), literal);
}

Var augmented_loss(Var h_query, Var h_masked_key, const Matrix& queue, double tau, bool literal) {
  return info_nce(h_query, h_masked_key, queue, tau, literal);
}

Var multistep_loss(Var h_virtual, Var h_real_future, const std::vector<std::size_t>& pairing, const Matrix& queue,
                   double tau, bool literal) {
  if (pairing.size() != h_virtual.rows()) throw DimensionError("multistep_loss: pairing size mismatch");
  std::vector<long> idx(pairing.begin(), pairing.end());
  for (long i : idx)
    if (static_cast<std::size_t>(i) >= h_real_future.rows()) throw DimensionError("multistep_loss: pairing out of range");
  return info_nce(h_virtual, ad::gather_rows(h_real_future, std::move(idx)), queue, tau, literal);
}

Var in_batch_loss(Var queries, Var keys, std::size_t query_group, std::size_t key_group,
                  const std::vector<std::size_t>& positives, double tau, bool literal) {
  if (!(tau > 0.0)) throw ConfigError("tau must be positive");
  if (query_group == 0 || key_group == 0 || queries.rows() % query_group != 0 || keys.rows() % key_group != 0 ||
      queries.rows() / query_group != keys.rows() / key_group || positives.size() != queries.rows()) {
    throw DimensionError("in_batch_loss: inconsistent grouping");
  }
  if (literal && key_group < 2) throw ConfigError("the literal denominator needs at least one negative");
  const std::size_t groups = queries.rows() / query_group;
  Var q = ad::l2_normalize_rows(queries);
  Var k = ad::l2_normalize_rows(keys);
  std::vector<Var> blocks;
  std::vector<std::size_t> targets(positives.size());
  for (std::size_t g = 0; g < groups; ++g) {
    blocks.push_back(ad::matmul_nt(ad::slice_rows(q, g * query_group, query_group), ad::slice_rows(k, g * key_group, key_group)));
    for (std::size_t i = 0; i < query_group; ++i) {
      const std::size_t p = positives[g * query_group + i];
      if (p < g * key_group || p >= (g + 1) * key_group) throw DimensionError("in_batch_loss: positive outside its group");
      targets[g * query_group + i] = p - g * key_group;
    }
  }
  return ad::cross_entropy_rows(ad::scale(ad::concat_rows(blocks), 1.0 / tau), std::move(targets), literal);
}

Var supervised_mse(Var pred, const Matrix& target) {
  if (!pred.value().same_shape(target)) {
    throw DimensionError("supervised_mse: prediction " + pred.value().shape_string() + " vs target " + target.shape_string());
  }
  if (!target.all_finite()) throw ContractError("supervised_mse: non-finite target");
  if (target.rows() == 0) throw ContractError("supervised_mse: no rows");
  Var diff = ad::sub(pred, pred.tape().constant(target));
  return ad::scale(ad::sum(ad::mul(diff, diff)), 1.0 / static_cast<double>(target.rows()));
}

double lambda_value(std::size_t epoch, double previous_mae, const LambdaSchedule& s) {
  if (epoch == 0) return 0.0;
  const double warm = std::min(1.0, static_cast<double>(epoch) / s.warmup_epochs);
  const double gate = 1.0 / (1.0 + std::exp(-s.kappa * (previous_mae - s.theta)));
  return warm * gate;
}

Var total_loss(Var sup, Var contrast, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ContractError("lambda must lie in [0, 1]");
  if (lambda == 0.0) return sup;
  return ad::add(sup, ad::scale(contrast, lambda));
}

double total_loss(double sup, double contrast, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ContractError("lambda must lie in [0, 1]");
  return sup + lambda * contrast;
}

PairDistances pair_distances(const Matrix& queries, const Matrix& keys, const Matrix& negatives,
                             const std::vector<long>* exclude) {
  if (!queries.same_shape(keys)) throw DimensionError("pair_distances: query/key shape mismatch");
  if (!negatives.empty() && negatives.cols() != queries.cols()) {
    throw DimensionError("pair_distances: negatives have the wrong width");
  }
  if (exclude != nullptr && exclude->size() != queries.rows()) {
    throw DimensionError("pair_distances: one exclusion per query expected");
  }
  // Zero rows have no direction; pairs touching one are left out.
  auto unit = [](std::span<const double> r, std::vector<double>& out) {
    double n = 0.0;
    for (double v : r) n += v * v;
    n = std::sqrt(n);
    out.assign(r.begin(), r.end());
    if (n == 0.0) return false;
    for (double& v : out) v /= n;
    return true;
  };
  auto dot = [](const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
  };

  // The negative sum over all pairs is count - q.(sum of unit negatives).
  const std::size_t d_cols = queries.cols();
  std::vector<std::vector<double>> neg_unit(negatives.rows());
  std::vector<bool> neg_ok(negatives.rows());
  std::vector<double> neg_sum(d_cols, 0.0);
  std::size_t neg_count = 0;
  for (std::size_t j = 0; j < negatives.rows(); ++j) {
    neg_ok[j] = unit(negatives.row(j), neg_unit[j]);
    if (!neg_ok[j]) continue;
    for (std::size_t c = 0; c < d_cols; ++c) neg_sum[c] += neg_unit[j][c];
    ++neg_count;
  }

  PairDistances d;
  double pos = 0.0, neg = 0.0;
  std::vector<double> q, k;
  for (std::size_t i = 0; i < queries.rows(); ++i) {
    if (!unit(queries.row(i), q)) continue;
    if (unit(keys.row(i), k)) {
      pos += 1.0 - dot(q, k);
      ++d.positive_pairs;
    }
    std::size_t count = neg_count;
    double s = static_cast<double>(neg_count) - dot(q, neg_sum);
    if (exclude != nullptr) {
      const long e = (*exclude)[i];
      if (e >= 0 && static_cast<std::size_t>(e) < negatives.rows() && neg_ok[e]) {
        s -= 1.0 - dot(q, neg_unit[e]);
        --count;
      }
    }
    neg += s;
    d.negative_pairs += count;
  }
  if (d.positive_pairs > 0) d.positive = pos / static_cast<double>(d.positive_pairs);
  if (d.negative_pairs > 0) d.negative = neg / static_cast<double>(d.negative_pairs);
  return d;
}

}  // namespace contravirt::objectives
