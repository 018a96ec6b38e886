#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "contravirt/datakit.hpp"
#include "contravirt/geo_graph.hpp"
#include "contravirt/matrix.hpp"

// Per-node, per-step input features and windowed samples.
//
// Constant feature columns, in order:
//   [0, 26)   meteorological channels (every code after dd/ff/gff), z-scored
//   [26, 30)  lag channels: sin dd, cos dd, z(ff), z(gff); zero for virtual
//             nodes, whose lags come from a learnable table instead
//   [30, 34)  geo embedding
//   [34, 38)  time embedding
// The learnable node-type embedding (type_dim columns) follows these in the
// first-layer weight matrix.

namespace contravirt::features {

struct FeatureLayout {
  static constexpr std::size_t kMet = data::kNumMet;
  static constexpr std::size_t kLag = 4;
  static constexpr std::size_t kGeo = 4;
  static constexpr std::size_t kTime = 4;
  static constexpr std::size_t kMetOffset = 0;
  static constexpr std::size_t kLagOffset = kMet;
  static constexpr std::size_t kGeoOffset = kLagOffset + kLag;
  static constexpr std::size_t kTimeOffset = kGeoOffset + kGeo;
  static constexpr std::size_t kConstWidth = kTimeOffset + kTime;  // 38
  /// Channels subject to feature masking in the augmented view.
  static constexpr std::size_t kMaskable = kMet + kLag;

  std::size_t type_dim = 8;

  std::size_t input_width() const { return kConstWidth + type_dim; }
  static std::vector<std::string> channel_names();
};

/// Per-variable mean and standard deviation indexed like data::kVariableCodes.
/// dd is never z-scored; its entry stays (0, 1). The sin/cos direction lag
/// inputs are z-scored with their own statistics so that zero (the value
/// virtual nodes carry) means "typical" for every lag channel; the sin/cos
/// targets stay raw.
struct NormStats {
  std::array<double, data::kNumVariables> mean{};
  std::array<double, data::kNumVariables> std{};
  std::array<double, 2> dir_mean{0.0, 0.0};  ///< sin dd, cos dd
  std::array<double, 2> dir_std{1.0, 1.0};
  std::vector<std::string> warnings;

  /// Uses only the listed stations and steps [0, step_end). Channels with no
  /// data or zero variance get std 1 and a warning.
  static NormStats compute(const data::Dataset& d, std::span<const std::size_t> stations, std::size_t step_end);

  double normalize(std::size_t var, double x) const { return (x - mean[var]) / std[var]; }
  double denormalize(std::size_t var, double z) const { return z * std[var] + mean[var]; }
  friend bool operator==(const NormStats& a, const NormStats& b) {
    return a.mean == b.mean && a.std == b.std && a.dir_mean == b.dir_mean && a.dir_std == b.dir_std;
  }
};

/// Fills runs of at most `max_gap` missing steps with the last observed value,
/// per station and variable. Returns the number of values filled.
std::size_t forward_fill(data::Dataset& d, std::size_t max_gap = 3);

/// [sin lat, cos lat, sin lon, cos lon] in radians.
std::array<double, 4> geo_embed(const geo::GeoPoint& p);
/// [sin 2pi tod, cos 2pi tod, sin 2pi doy, cos 2pi doy] with tod and doy the
/// elapsed fractions of the UTC day and year.
std::array<double, 4> time_embed(data::Timestamp t);

/// Inverse-distance weighted mean with a 1 m distance floor. NaN values are
/// excluded and the remaining weights renormalised; all-NaN gives nullopt.
std::optional<double> idw_mean(std::span<const double> distances_km, std::span<const double> values);

/// Met channels of a virtual node from its nearest real neighbours:
/// `neighbor_values` holds one kNumMet row per neighbour. Channels missing at
/// every neighbour are returned as NaN.
std::array<double, data::kNumMet> approx_virtual_met(std::span<const double> distances_km,
                                                     std::span<const std::array<double, data::kNumMet>> neighbor_values);

struct DecodedTargets {
  double dd = 0.0;
  double ff = 0.0;
  double gff = 0.0;
  bool direction_undefined = false;
};

/// [sin dd, cos dd, z(ff), z(gff)].
std::array<double, 4> encode_targets(double dd, double ff, double gff, const NormStats& s);
/// Lag input channels: encode_targets with the direction pair z-scored.
std::array<double, 4> encode_lags(double dd, double ff, double gff, const NormStats& s);
/// Inverse of encode_targets; direction via atan2 in [0, 360).
DecodedTargets decode_targets(std::span<const double> encoded, const NormStats& s);

struct WindowSpec {
  std::size_t t_in = 36;
  std::size_t t_out = 6;
  std::size_t stride = 1;
  std::size_t length() const { return t_in + t_out; }
};

/// Start indices of sliding windows over [begin, end). A window starting at s
/// reads inputs s .. s+t_in-1 and targets s+t_in .. s+t_in+t_out-1; it is kept
/// only when `input_ok` holds on every input step and `target_ok` on every
/// target step (empty spans mean "always"). Too-short ranges give an empty
/// list and, when `warning` is non-null, a message.
std::vector<std::size_t> make_windows(std::size_t begin, std::size_t end, const WindowSpec& spec,
                                      std::span<const std::uint8_t> input_ok = {},
                                      std::span<const std::uint8_t> target_ok = {}, std::string* warning = nullptr);

/// Per-node static data needed to assemble inputs.
struct NodeMeta {
  std::size_t nodes = 0;
  std::size_t n_real = 0;
  std::size_t n_virtual = 0;
  std::vector<long> lag_index;      ///< virtual ordinal per node, -1 for real nodes
  std::vector<long> type_index;     ///< 0 real, 1 virtual
  std::vector<std::size_t> real_nodes;
  std::vector<std::size_t> virtual_nodes;

  static NodeMeta from(const geo::NodeSet& nodes);
};

/// Feature and label tensors for every step of a dataset on a node set.
struct FeatureFrames {
  std::size_t steps = 0;
  std::size_t nodes = 0;
  std::vector<double> x;              ///< [step][node][kConstWidth]
  std::vector<double> target;         ///< [step][node][4], NaN where unavailable
  std::vector<std::uint8_t> input_ok; ///< [step]: every real node has its lag channels
  std::vector<std::uint8_t> target_ok;///< [step]: every real node has finite targets
  std::size_t filled_values = 0;      ///< forward-filled entries
  std::size_t imputed_values = 0;     ///< met entries replaced by the training mean

  const double* features(std::size_t step, std::size_t node) const {
    return x.data() + (step * nodes + node) * FeatureLayout::kConstWidth;
  }
  const double* targets(std::size_t step, std::size_t node) const {
    return target.data() + (step * nodes + node) * 4;
  }
};

/// Builds frames from `observed`, which must not contain observations from
/// withheld stations. Lag channels use forward-filled data, labels use the
/// raw observations.
FeatureFrames build_frames(const data::Dataset& observed, const geo::NodeSet& nodes, const NormStats& stats,
                           std::size_t max_fill_gap = 3);

/// One training example.
struct WindowSample {
  std::size_t start = 0;
  data::Timestamp anchor_time = 0;  ///< time of the last input step
  Matrix x;                         ///< [t_in * N][kConstWidth], rows ordered [step][node]
  Matrix y;                         ///< [n_real][t_out * 4]
  std::optional<Matrix> future_x;   ///< inputs shifted by the multi-step offset
};

WindowSample materialize(const FeatureFrames& frames, const NodeMeta& meta, const data::Dataset& d, std::size_t start,
                         const WindowSpec& spec, std::optional<std::size_t> future_offset = std::nullopt);

}  // namespace contravirt::features
