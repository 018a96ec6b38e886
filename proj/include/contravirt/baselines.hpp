#pragma once

#include <array>
#include <span>
#include <vector>

#include "contravirt/datakit.hpp"
#include "contravirt/geo_graph.hpp"
#include "contravirt/matrix.hpp"
#include "contravirt/metrics.hpp"

// Interpolation (IDW, KNN) and ridge-regression (AR, LR) baselines.

namespace contravirt::baselines {

struct Wind {
  double dd = 0.0;
  double ff = 0.0;
  double gff = 0.0;
};

/// Weighted combination: arithmetic for speed and gust, vector mean for
/// direction (atan2 of the weighted sin/cos sums, in [0, 360)).
Wind combine(std::span<const double> weights, std::span<const Wind> values);

/// Inverse-distance weights over the k nearest stations (1 m distance floor).
/// Throws DataError when fewer than k stations are given.
Wind idw_predict(const geo::GeoPoint& target, std::span<const geo::GeoPoint> stations, std::span<const Wind> obs,
                 std::size_t k = 3);
/// Unweighted mean over the k nearest stations.
Wind knn_predict(const geo::GeoPoint& target, std::span<const geo::GeoPoint> stations, std::span<const Wind> obs,
                 std::size_t k = 3);

/// Ridge regression on z-scored inputs with a free intercept.
struct RidgeModel {
  std::vector<double> x_mean;
  std::vector<double> x_std;  ///< 1 for zero-variance columns (which then carry zero coefficients)
  std::vector<double> y_mean;
  Matrix beta;                ///< inputs x outputs, in standardised input units
  double lambda = 1e-3;

  static RidgeModel fit(const Matrix& x, const Matrix& y, double lambda);
  Matrix predict(const Matrix& x) const;
  /// Standardised design matrix used by fit.
  Matrix standardize(const Matrix& x) const;
};

enum class LinearKind { AR, LR };
std::string to_string(LinearKind k);

/// Input channels of the stencil for `target`: AR uses the target variable
/// only (direction as a sin/cos pair), LR all four wind channels
/// (sin dd, cos dd, ff, gff).
std::vector<std::size_t> stencil_channels(LinearKind kind, metrics::Variable target);

/// One stencil row: neighbour-major, then lag (oldest first), then channel.
/// Reads steps [start, start + t_in) of `d`.
std::vector<double> stencil_row(const data::Dataset& d, std::span<const std::size_t> neighbours, std::size_t start,
                                std::size_t t_in, LinearKind kind, metrics::Variable target);

struct LinearBaseline {
  LinearKind kind = LinearKind::AR;
  std::size_t t_in = 36;
  std::size_t t_out = 6;
  std::size_t neighbours = 3;
  /// dd (sin and cos per lead), ff, gff.
  std::array<RidgeModel, 3> models;
  std::size_t training_rows = 0;
};

/// Nearest `k` stations among `pool` (dataset station indices) to station or
/// point `target`, never including `exclude`.
std::vector<std::size_t> nearest_stations(const data::Dataset& d, const geo::GeoPoint& target,
                                          std::span<const std::size_t> pool, std::size_t k,
                                          std::optional<std::size_t> exclude = std::nullopt);

/// Fits on pseudo-targets: every training station against its own nearest
/// training neighbours, for every window start in `starts`. Inputs come from
/// `inputs` (gap-filled), labels from `labels` (raw observations); rows with a
/// missing value are skipped.
LinearBaseline fit_linear(LinearKind kind, const data::Dataset& inputs, const data::Dataset& labels,
                          std::span<const std::size_t> train_stations, std::span<const std::size_t> starts,
                          std::size_t t_in, std::size_t t_out, double lambda = 1e-3, std::size_t neighbours = 3);

/// Forecasts for leads 1..t_out at a location whose neighbours are given.
std::vector<Wind> predict_linear(const LinearBaseline& m, const data::Dataset& inputs,
                                 std::span<const std::size_t> neighbours, std::size_t start);

}  // namespace contravirt::baselines
