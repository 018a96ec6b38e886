#include "contravirt/baselines.hpp"

#include <cmath>
#include <numbers>

#include "contravirt/errors.hpp"
#include "contravirt/kernels.hpp"
#include "contravirt/linalg.hpp"

namespace contravirt::baselines {

using metrics::Variable;

namespace {
constexpr double kDegToRad = std::numbers::pi / 180.0;

double direction_from(double s, double c) {
  double dd = std::atan2(s, c) / kDegToRad;
  if (dd < 0.0) dd += 360.0;
  if (dd >= 360.0) dd -= 360.0;
  return dd;
}
}  // namespace

Wind combine(std::span<const double> weights, std::span<const Wind> values) {
  if (weights.size() != values.size() || weights.empty()) throw DimensionError("combine: weight/value mismatch");
  double wsum = 0.0, s = 0.0, c = 0.0, ff = 0.0, gff = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double w = weights[i];
    wsum += w;
    s += w * std::sin(values[i].dd * kDegToRad);
    c += w * std::cos(values[i].dd * kDegToRad);
    ff += w * values[i].ff;
    gff += w * values[i].gff;
  }
  if (!(wsum > 0.0)) throw NumericalError("combine: weights sum to zero");
  return {direction_from(s, c), ff / wsum, gff / wsum};
}

namespace {
std::vector<std::size_t> select_k(const geo::GeoPoint& target, std::span<const geo::GeoPoint> stations,
                                  std::span<const Wind> obs, std::size_t k) {
  if (stations.size() != obs.size()) throw DimensionError("station/observation count mismatch");
  if (k == 0 || stations.size() < k) {
    throw DataError("need at least " + std::to_string(k) + " stations, have " + std::to_string(stations.size()));
  }
  return geo::nearest(target, stations, k);
}
}  // namespace

Wind idw_predict(const geo::GeoPoint& target, std::span<const geo::GeoPoint> stations, std::span<const Wind> obs,
                 std::size_t k) {
  const auto idx = select_k(target, stations, obs, k);
  std::vector<double> w;
  std::vector<Wind> v;
  for (std::size_t i : idx) {
    w.push_back(1.0 / std::max(geo::haversine_km(target, stations[i]), 1e-3));
    v.push_back(obs[i]);
  }
  return combine(w, v);
}

Wind knn_predict(const geo::GeoPoint& target, std::span<const geo::GeoPoint> stations, std::span<const Wind> obs,
                 std::size_t k) {
  const auto idx = select_k(target, stations, obs, k);
  std::vector<double> w(idx.size(), 1.0);
  std::vector<Wind> v;
  for (std::size_t i : idx) v.push_back(obs[i]);
  return combine(w, v);
}

// ---------------------------------------------------------------------------
// Ridge

Matrix RidgeModel::standardize(const Matrix& x) const {
  if (x.cols() != x_mean.size()) throw DimensionError("ridge: input width mismatch");
  Matrix z(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < x.cols(); ++c) z(r, c) = (x(r, c) - x_mean[c]) / x_std[c];
  return z;
}

RidgeModel RidgeModel::fit(const Matrix& x, const Matrix& y, double lambda) {
  if (x.rows() != y.rows() || x.rows() == 0) throw DimensionError("ridge: need matching, non-empty x and y");
  if (!(lambda > 0.0)) throw ConfigError("ridge lambda must be positive");
  const std::size_t n = x.rows(), p = x.cols(), q = y.cols();
  RidgeModel m;
  m.lambda = lambda;
  m.x_mean.assign(p, 0.0);
  m.x_std.assign(p, 1.0);
  m.y_mean.assign(q, 0.0);
  for (std::size_t c = 0; c < p; ++c) {
    double s = 0.0;
    for (std::size_t r = 0; r < n; ++r) s += x(r, c);
    const double mean = s / static_cast<double>(n);
    double ss = 0.0;
    for (std::size_t r = 0; r < n; ++r) ss += (x(r, c) - mean) * (x(r, c) - mean);
    const double sd = std::sqrt(ss / static_cast<double>(n));
    if (sd > 1e-12 * std::max(1.0, std::abs(mean))) {
      m.x_mean[c] = mean;
      m.x_std[c] = sd;
    } else {
      // Constant columns standardise to exactly zero and keep a zero coefficient.
      m.x_mean[c] = x(0, c);
    }
  }
  for (std::size_t c = 0; c < q; ++c) {
    double s = 0.0;
    for (std::size_t r = 0; r < n; ++r) s += y(r, c);
    m.y_mean[c] = s / static_cast<double>(n);
  }
  Matrix z = m.standardize(x);
  Matrix yc(n, q);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < q; ++c) yc(r, c) = y(r, c) - m.y_mean[c];
  Matrix g(p, p);
  kernels::gram(z, g);
  for (std::size_t i = 0; i < p; ++i) g(i, i) += lambda;
  Matrix rhs(p, q);
  kernels::gemm_tn(z, yc, rhs);
  m.beta = linalg::cholesky_solve(g, rhs);
  return m;
}

Matrix RidgeModel::predict(const Matrix& x) const {
  Matrix out(x.rows(), beta.cols());
  kernels::gemm_nn(standardize(x), beta, out);
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) += y_mean[c];
  return out;
}

// ---------------------------------------------------------------------------
// Stencils

std::string to_string(LinearKind k) { return k == LinearKind::AR ? "ar" : "lr"; }

namespace {
// Wind channels: 0 sin dd, 1 cos dd, 2 ff, 3 gff.
double channel_value(const data::Dataset& d, std::size_t st, std::size_t t, std::size_t ch) {
  switch (ch) {
    case 0:
      return std::sin(d.value(st, t, data::kDd) * kDegToRad);
    case 1:
      return std::cos(d.value(st, t, data::kDd) * kDegToRad);
    case 2:
      return d.value(st, t, data::kFf);
    default:
      return d.value(st, t, data::kGff);
  }
}
}  // namespace

std::vector<std::size_t> stencil_channels(LinearKind kind, Variable target) {
  if (kind == LinearKind::LR) return {0, 1, 2, 3};
  switch (target) {
    case Variable::Direction:
      return {0, 1};
    case Variable::Speed:
      return {2};
    case Variable::Gust:
      return {3};
  }
  return {};
}

std::vector<double> stencil_row(const data::Dataset& d, std::span<const std::size_t> neighbours, std::size_t start,
                                std::size_t t_in, LinearKind kind, Variable target) {
  if (start + t_in > d.steps()) throw ContractError("stencil extends past the data");
  const auto ch = stencil_channels(kind, target);
  std::vector<double> row;
  row.reserve(neighbours.size() * t_in * ch.size());
  for (std::size_t st : neighbours)
    for (std::size_t l = 0; l < t_in; ++l)
      for (std::size_t c : ch) row.push_back(channel_value(d, st, start + l, c));
  return row;
}

std::vector<std::size_t> nearest_stations(const data::Dataset& d, const geo::GeoPoint& target,
                                          std::span<const std::size_t> pool, std::size_t k,
                                          std::optional<std::size_t> exclude) {
  std::vector<std::size_t> cand;
  std::vector<geo::GeoPoint> pts;
  for (std::size_t s : pool) {
    if (exclude && *exclude == s) continue;
    cand.push_back(s);
    pts.push_back(d.stations()[s].location);
  }
  if (cand.size() < k) throw DataError("need " + std::to_string(k) + " neighbouring stations, have " + std::to_string(cand.size()));
  std::vector<std::size_t> out;
  for (std::size_t i : geo::nearest(target, pts, k)) out.push_back(cand[i]);
  return out;
}

namespace {
std::vector<std::size_t> target_channels(Variable v) {
  switch (v) {
    case Variable::Direction:
      return {0, 1};
    case Variable::Speed:
      return {2};
    case Variable::Gust:
      return {3};
  }
  return {};
}
constexpr std::array<Variable, 3> kVariables = {Variable::Direction, Variable::Speed, Variable::Gust};
}  // namespace

LinearBaseline fit_linear(LinearKind kind, const data::Dataset& inputs, const data::Dataset& labels,
                          std::span<const std::size_t> train_stations, std::span<const std::size_t> starts,
                          std::size_t t_in, std::size_t t_out, double lambda, std::size_t neighbours) {
  LinearBaseline m;
  m.kind = kind;
  m.t_in = t_in;
  m.t_out = t_out;
  m.neighbours = neighbours;
  std::vector<std::vector<std::size_t>> neigh;
  for (std::size_t s : train_stations)
    neigh.push_back(nearest_stations(inputs, inputs.stations()[s].location, train_stations, neighbours, s));

  for (std::size_t vi = 0; vi < kVariables.size(); ++vi) {
    const Variable v = kVariables[vi];
    const auto tch = target_channels(v);
    std::vector<double> xs, ys;
    std::size_t rows = 0, width = 0;
    for (std::size_t si = 0; si < train_stations.size(); ++si) {
      for (std::size_t start : starts) {
        if (start + t_in + t_out > inputs.steps()) continue;
        auto row = stencil_row(inputs, neigh[si], start, t_in, kind, v);
        std::vector<double> y;
        for (std::size_t l = 0; l < t_out; ++l)
          for (std::size_t c : tch) y.push_back(channel_value(labels, train_stations[si], start + t_in + l, c));
        bool ok = true;
        for (double x : row) ok = ok && std::isfinite(x);
        for (double x : y) ok = ok && std::isfinite(x);
        if (!ok) continue;
        width = row.size();
        xs.insert(xs.end(), row.begin(), row.end());
        ys.insert(ys.end(), y.begin(), y.end());
        ++rows;
      }
    }
    if (rows == 0) throw DataError("no complete training rows for the " + to_string(kind) + " baseline");
    m.models[vi] = RidgeModel::fit(Matrix(rows, width, std::move(xs)), Matrix(rows, t_out * tch.size(), std::move(ys)), lambda);
    m.training_rows = rows;
  }
  return m;
}

std::vector<Wind> predict_linear(const LinearBaseline& m, const data::Dataset& inputs,
                                 std::span<const std::size_t> neighbours, std::size_t start) {
  std::vector<Wind> out(m.t_out);
  for (std::size_t vi = 0; vi < kVariables.size(); ++vi) {
    const Variable v = kVariables[vi];
    auto row = stencil_row(inputs, neighbours, start, m.t_in, m.kind, v);
    const std::size_t width = row.size();
    const Matrix pred = m.models[vi].predict(Matrix(1, width, std::move(row)));
    for (std::size_t l = 0; l < m.t_out; ++l) {
      switch (v) {
        case Variable::Direction:
          out[l].dd = direction_from(pred(0, 2 * l), pred(0, 2 * l + 1));
          break;
        case Variable::Speed:
          out[l].ff = pred(0, l);
          break;
        case Variable::Gust:
          out[l].gff = pred(0, l);
          break;
      }
    }
  }
  return out;
}

}  // namespace contravirt::baselines
