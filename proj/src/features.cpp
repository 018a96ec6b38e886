#include "contravirt/features.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "contravirt/errors.hpp"

namespace contravirt::features {

using data::kDd;
using data::kFf;
using data::kFirstMet;
using data::kGff;
using data::kNumMet;
using data::kNumVariables;

namespace {
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kDegToRad = std::numbers::pi / 180.0;
constexpr double kTwoPi = 2.0 * std::numbers::pi;
}  // namespace

std::vector<std::string> FeatureLayout::channel_names() {
  std::vector<std::string> out;
  for (std::size_t v = kFirstMet; v < kNumVariables; ++v) out.emplace_back(data::kVariableCodes[v]);
  for (const char* n : {"lag_sin_dd", "lag_cos_dd", "lag_ff", "lag_gff", "geo_sin_lat", "geo_cos_lat", "geo_sin_lon",
                        "geo_cos_lon", "time_sin_day", "time_cos_day", "time_sin_year", "time_cos_year"}) {
    out.emplace_back(n);
  }
  return out;
}

NormStats NormStats::compute(const data::Dataset& d, std::span<const std::size_t> stations, std::size_t step_end) {
  NormStats s;
  step_end = std::min(step_end, d.steps());
  for (std::size_t v = 0; v < kNumVariables; ++v) {
    s.mean[v] = 0.0;
    s.std[v] = 1.0;
    if (v == kDd) continue;
    // Two-pass mean/variance in a fixed summation order.
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t st : stations)
      for (std::size_t t = 0; t < step_end; ++t) {
        const double x = d.value(st, t, v);
        if (std::isnan(x)) continue;
        sum += x;
        ++n;
      }
    const std::string code(data::kVariableCodes[v]);
    if (n == 0) {
      s.warnings.push_back("channel " + code + " has no training data; using mean 0, std 1");
      continue;
    }
    const double mean = sum / static_cast<double>(n);
    double ss = 0.0;
    for (std::size_t st : stations)
      for (std::size_t t = 0; t < step_end; ++t) {
        const double x = d.value(st, t, v);
        if (!std::isnan(x)) ss += (x - mean) * (x - mean);
      }
    const double sd = std::sqrt(ss / static_cast<double>(n));
    s.mean[v] = mean;
    if (sd > 0.0 && std::isfinite(sd)) {
      s.std[v] = sd;
    } else {
      s.warnings.push_back("channel " + code + " has zero variance; using std 1");
    }
  }

  std::array<double, 2> sum{0.0, 0.0};
  std::size_t n = 0;
  for (std::size_t st : stations)
    for (std::size_t t = 0; t < step_end; ++t) {
      const double x = d.value(st, t, kDd);
      if (std::isnan(x)) continue;
      const double r = x * kDegToRad;
      sum[0] += std::sin(r);
      sum[1] += std::cos(r);
      ++n;
    }
  if (n == 0) return s;
  s.dir_mean = {sum[0] / static_cast<double>(n), sum[1] / static_cast<double>(n)};
  std::array<double, 2> ss{0.0, 0.0};
  for (std::size_t st : stations)
    for (std::size_t t = 0; t < step_end; ++t) {
      const double x = d.value(st, t, kDd);
      if (std::isnan(x)) continue;
      const double r = x * kDegToRad;
      ss[0] += (std::sin(r) - s.dir_mean[0]) * (std::sin(r) - s.dir_mean[0]);
      ss[1] += (std::cos(r) - s.dir_mean[1]) * (std::cos(r) - s.dir_mean[1]);
    }
  for (int i = 0; i < 2; ++i) {
    const double sd = std::sqrt(ss[i] / static_cast<double>(n));
    if (sd > 0.0 && std::isfinite(sd)) {
      s.dir_std[i] = sd;
    } else {
      s.warnings.push_back(std::string("direction lag ") + (i == 0 ? "sin" : "cos") + " has zero variance; using std 1");
    }
  }
  return s;
}

std::size_t forward_fill(data::Dataset& d, std::size_t max_gap) {
  std::size_t filled = 0;
  for (std::size_t s = 0; s < d.station_count(); ++s)
    for (std::size_t v = 0; v < kNumVariables; ++v) {
      double last = kNaN;
      std::size_t since = 0;
      for (std::size_t t = 0; t < d.steps(); ++t) {
        const double x = d.value(s, t, v);
        if (!std::isnan(x)) {
          last = x;
          since = 0;
          continue;
        }
        ++since;
        if (!std::isnan(last) && since <= max_gap) {
          d.set(s, t, v, last);
          ++filled;
        }
      }
    }
  return filled;
}

std::array<double, 4> geo_embed(const geo::GeoPoint& p) {
  const double lat = p.lat * kDegToRad, lon = p.lon * kDegToRad;
  return {std::sin(lat), std::cos(lat), std::sin(lon), std::cos(lon)};
}

std::array<double, 4> time_embed(data::Timestamp t) {
  const data::CivilTime c = data::to_civil(t);
  const data::Timestamp day_start = t - (c.hour * 3600 + c.minute * 60 + c.second);
  const data::Timestamp year_start = data::to_timestamp({c.year, 1, 1, 0, 0, 0});
  const data::Timestamp next_year = data::to_timestamp({c.year + 1, 1, 1, 0, 0, 0});
  const double tod = static_cast<double>(t - day_start) / 86400.0;
  const double doy = static_cast<double>(t - year_start) / static_cast<double>(next_year - year_start);
  return {std::sin(kTwoPi * tod), std::cos(kTwoPi * tod), std::sin(kTwoPi * doy), std::cos(kTwoPi * doy)};
}

std::optional<double> idw_mean(std::span<const double> distances_km, std::span<const double> values) {
  if (distances_km.size() != values.size()) throw DimensionError("idw_mean: distance/value count mismatch");
  constexpr double kFloorKm = 1e-3;  // 1 m
  double wsum = 0.0, acc = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (std::isnan(values[i])) continue;
    const double w = 1.0 / std::max(distances_km[i], kFloorKm);
    wsum += w;
    acc += w * values[i];
  }
  if (wsum == 0.0) return std::nullopt;
  return acc / wsum;
}

std::array<double, kNumMet> approx_virtual_met(std::span<const double> distances_km,
                                               std::span<const std::array<double, kNumMet>> neighbor_values) {
  if (distances_km.size() != neighbor_values.size()) throw DimensionError("approx_virtual_met: neighbour mismatch");
  std::array<double, kNumMet> out{};
  std::vector<double> col(neighbor_values.size());
  for (std::size_t c = 0; c < kNumMet; ++c) {
    for (std::size_t i = 0; i < neighbor_values.size(); ++i) col[i] = neighbor_values[i][c];
    out[c] = idw_mean(distances_km, col).value_or(kNaN);
  }
  return out;
}

std::array<double, 4> encode_targets(double dd, double ff, double gff, const NormStats& s) {
  const double r = dd * kDegToRad;
  return {std::sin(r), std::cos(r), s.normalize(kFf, ff), s.normalize(kGff, gff)};
}

std::array<double, 4> encode_lags(double dd, double ff, double gff, const NormStats& s) {
  auto e = encode_targets(dd, ff, gff, s);
  e[0] = (e[0] - s.dir_mean[0]) / s.dir_std[0];
  e[1] = (e[1] - s.dir_mean[1]) / s.dir_std[1];
  return e;
}

DecodedTargets decode_targets(std::span<const double> e, const NormStats& s) {
  if (e.size() != 4) throw DimensionError("decode_targets expects 4 values");
  DecodedTargets out;
  if (std::hypot(e[0], e[1]) < 1e-12) {
    out.direction_undefined = true;
    out.dd = 0.0;
  } else {
    double dd = std::atan2(e[0], e[1]) / kDegToRad;
    if (dd < 0.0) dd += 360.0;
    if (dd >= 360.0) dd -= 360.0;
    out.dd = dd;
  }
  out.ff = s.denormalize(kFf, e[2]);
  out.gff = s.denormalize(kGff, e[3]);
  return out;
}

std::vector<std::size_t> make_windows(std::size_t begin, std::size_t end, const WindowSpec& spec,
                                      std::span<const std::uint8_t> input_ok,
                                      std::span<const std::uint8_t> target_ok, std::string* warning) {
  if (spec.t_in < 1 || spec.t_out < 1 || spec.stride < 1) throw ConfigError("window sizes and stride must be >= 1");
  std::vector<std::size_t> out;
  if (end < begin || end - begin < spec.length()) {
    if (warning != nullptr) {
      *warning = "series of " + std::to_string(end > begin ? end - begin : 0) + " steps is shorter than one window (" +
                 std::to_string(spec.length()) + ")";
    }
    return out;
  }
  // Prefix counts of failing steps make each window check O(1).
  auto prefix = [&](std::span<const std::uint8_t> ok) {
    std::vector<std::size_t> p(end + 1, 0);
    for (std::size_t t = 0; t < end; ++t) p[t + 1] = p[t] + ((ok.empty() || ok[t]) ? 0 : 1);
    return p;
  };
  if (!input_ok.empty() && input_ok.size() < end) throw DimensionError("input_ok shorter than range");
  if (!target_ok.empty() && target_ok.size() < end) throw DimensionError("target_ok shorter than range");
  const auto pin = prefix(input_ok);
  const auto pout = prefix(target_ok);
  for (std::size_t s = begin; s + spec.length() <= end; s += spec.stride) {
    const std::size_t mid = s + spec.t_in, last = s + spec.length();
    if (pin[mid] - pin[s] == 0 && pout[last] - pout[mid] == 0) out.push_back(s);
  }
  return out;
}

NodeMeta NodeMeta::from(const geo::NodeSet& nodes) {
  NodeMeta m;
  m.nodes = nodes.size();
  m.real_nodes = nodes.real();
  m.virtual_nodes = nodes.virtual_nodes();
  m.n_real = m.real_nodes.size();
  m.n_virtual = m.virtual_nodes.size();
  m.lag_index.assign(m.nodes, -1);
  m.type_index.assign(m.nodes, 0);
  for (std::size_t i = 0; i < m.n_virtual; ++i) {
    m.lag_index[m.virtual_nodes[i]] = static_cast<long>(i);
    m.type_index[m.virtual_nodes[i]] = 1;
  }
  return m;
}

FeatureFrames build_frames(const data::Dataset& observed, const geo::NodeSet& nodes, const NormStats& stats,
                           std::size_t max_fill_gap) {
  constexpr std::size_t W = FeatureLayout::kConstWidth;
  FeatureFrames f;
  f.steps = observed.steps();
  f.nodes = nodes.size();
  f.x.assign(f.steps * f.nodes * W, 0.0);
  f.target.assign(f.steps * f.nodes * 4, kNaN);
  f.input_ok.assign(f.steps, 1);
  f.target_ok.assign(f.steps, 1);

  data::Dataset filled = observed;
  f.filled_values = forward_fill(filled, max_fill_gap);

  // Station row for every real node.
  std::vector<std::size_t> station_of(nodes.size(), 0);
  std::vector<geo::GeoPoint> real_points;
  for (std::size_t id : nodes.real()) {
    const auto st = observed.find(nodes[id].station_id);
    if (!st) throw DataError("real node " + std::to_string(id) + " has no station series '" + nodes[id].station_id + "'");
    station_of[id] = *st;
    real_points.push_back(nodes[id].location);
  }
  // Neighbours for virtual-node approximations.
  struct Neighbours {
    std::vector<std::size_t> nodes;
    std::vector<double> dist;
  };
  std::vector<Neighbours> neigh(nodes.size());
  for (std::size_t id : nodes.virtual_nodes()) {
    for (std::size_t r : geo::nearest(nodes[id].location, real_points, 3)) {
      const std::size_t rid = nodes.real()[r];
      neigh[id].nodes.push_back(rid);
      neigh[id].dist.push_back(geo::haversine_km(nodes[id].location, nodes[rid].location));
    }
  }

  std::vector<std::array<double, 4>> geo_rows(nodes.size());
  for (std::size_t n = 0; n < nodes.size(); ++n) geo_rows[n] = geo_embed(nodes[n].location);

  std::vector<std::array<double, kNumMet>> real_met(nodes.size());
  for (std::size_t t = 0; t < f.steps; ++t) {
    const auto temb = time_embed(observed.time_at(t));
    for (std::size_t id : nodes.real()) {
      const std::size_t st = station_of[id];
      auto& met = real_met[id];
      for (std::size_t c = 0; c < kNumMet; ++c) {
        const double v = filled.value(st, t, kFirstMet + c);
        met[c] = std::isnan(v) ? kNaN : stats.normalize(kFirstMet + c, v);
      }
    }
    for (std::size_t n = 0; n < nodes.size(); ++n) {
      double* row = f.x.data() + (t * f.nodes + n) * W;
      const bool is_real = nodes[n].kind == geo::NodeKind::Real;
      std::array<double, kNumMet> met{};
      if (is_real) {
        met = real_met[n];
      } else if (!neigh[n].nodes.empty()) {
        std::vector<std::array<double, kNumMet>> vals;
        for (std::size_t r : neigh[n].nodes) vals.push_back(real_met[r]);
        met = approx_virtual_met(neigh[n].dist, vals);
      } else {
        met.fill(kNaN);
      }
      for (std::size_t c = 0; c < kNumMet; ++c) {
        if (std::isnan(met[c])) {
          met[c] = 0.0;  // training mean in normalised space
          ++f.imputed_values;
        }
        row[FeatureLayout::kMetOffset + c] = met[c];
      }
      if (is_real) {
        const std::size_t st = station_of[n];
        const double dd = filled.value(st, t, kDd), ff = filled.value(st, t, kFf), gff = filled.value(st, t, kGff);
        if (std::isnan(dd) || std::isnan(ff) || std::isnan(gff)) {
          f.input_ok[t] = 0;
        } else {
          const auto lag = encode_lags(dd, ff, gff, stats);
          std::copy(lag.begin(), lag.end(), row + FeatureLayout::kLagOffset);
        }
        const double rdd = observed.value(st, t, kDd), rff = observed.value(st, t, kFf),
                     rgff = observed.value(st, t, kGff);
        if (std::isnan(rdd) || std::isnan(rff) || std::isnan(rgff)) {
          f.target_ok[t] = 0;
        } else {
          const auto enc = encode_targets(rdd, rff, rgff, stats);
          std::copy(enc.begin(), enc.end(), f.target.data() + (t * f.nodes + n) * 4);
        }
      }
      std::copy(geo_rows[n].begin(), geo_rows[n].end(), row + FeatureLayout::kGeoOffset);
      std::copy(temb.begin(), temb.end(), row + FeatureLayout::kTimeOffset);
    }
  }
  return f;
}

WindowSample materialize(const FeatureFrames& frames, const NodeMeta& meta, const data::Dataset& d, std::size_t start,
                         const WindowSpec& spec, std::optional<std::size_t> future_offset) {
  constexpr std::size_t W = FeatureLayout::kConstWidth;
  const std::size_t end = start + spec.length();
  if (end > frames.steps) throw ContractError("window extends past the end of the frames");
  auto inputs = [&](std::size_t s0) {
    Matrix x(spec.t_in * frames.nodes, W);
    for (std::size_t t = 0; t < spec.t_in; ++t)
      for (std::size_t n = 0; n < frames.nodes; ++n)
        std::copy_n(frames.features(s0 + t, n), W, x.row(t * frames.nodes + n).data());
    return x;
  };
  WindowSample w;
  w.start = start;
  w.anchor_time = d.time_at(start + spec.t_in - 1);
  w.x = inputs(start);
  w.y = Matrix(meta.n_real, spec.t_out * 4);
  for (std::size_t r = 0; r < meta.n_real; ++r)
    for (std::size_t l = 0; l < spec.t_out; ++l)
      std::copy_n(frames.targets(start + spec.t_in + l, meta.real_nodes[r]), 4, w.y.row(r).data() + l * 4);
  if (future_offset && start + *future_offset + spec.t_in <= frames.steps) w.future_x = inputs(start + *future_offset);
  return w;
}

}  // namespace contravirt::features
