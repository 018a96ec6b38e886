#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "contravirt/geo_graph.hpp"

// Station data: the documented CSV schema, a regular 10-minute dataset, the
// desk-scale synthetic wind field, and train/test splits.

namespace contravirt::data {

/// Seconds since 1970-01-01T00:00:00Z.
using Timestamp = std::int64_t;
inline constexpr Timestamp kStepSeconds = 600;

struct CivilTime {
  int year = 1970;
  int month = 1;
  int day = 1;
  int hour = 0;
  int minute = 0;
  int second = 0;
};

Timestamp to_timestamp(const CivilTime& c);
CivilTime to_civil(Timestamp t);
/// Accepts "YYYY-MM-DDTHH:MM:SSZ" and "YYYY-MM-DD HH:MM:SS". Throws DataError.
Timestamp parse_timestamp(std::string_view text);
/// "YYYY-MM-DDTHH:MM:SSZ"
std::string format_timestamp(Timestamp t);
/// Snaps to the 10-minute grid when within 60 s; nullopt otherwise.
std::optional<Timestamp> snap_to_step(Timestamp t);

/// Station variable codes in column order. dd, ff and gff come first.
inline constexpr std::array<std::string_view, 29> kVariableCodes = {
    "dd",  "ff",    "gff",   "ta",    "rh",  "pp",  "zm",   "qg",    "D1H",   "dr",
    "R6H", "R12H",  "R24H",  "rg",    "ss",  "td",  "Tgn",  "Tgn6",  "Tgn12", "Tgn14",
    "Tn",  "Tn6",   "Tn12",  "Tn14",  "Tx",  "Tx6", "Tx12", "Tx24",  "ww-10"};
inline constexpr std::size_t kNumVariables = kVariableCodes.size();
inline constexpr std::size_t kDd = 0;
inline constexpr std::size_t kFf = 1;
inline constexpr std::size_t kGff = 2;
inline constexpr std::size_t kFirstMet = 3;
inline constexpr std::size_t kNumMet = kNumVariables - kFirstMet;  // 26

using VariableRow = std::array<double, kNumVariables>;  ///< NaN marks a missing value

/// Quality flags attached to parsed records.
enum RecordFlag : std::uint32_t {
  kFlagNone = 0,
  kFlagDirectionWrapped = 1u << 0,  ///< dd == 360 reduced to 0
  kFlagOutOfRange = 1u << 1,        ///< a value outside its physical range was dropped
  kFlagGustBelowSpeed = 1u << 2,    ///< gff < ff (kept)
  kFlagSnapped = 1u << 3,           ///< timestamp moved onto the 10-minute grid
};

struct StationRecord {
  std::string station_id;
  Timestamp time = 0;
  VariableRow values{};
  std::uint32_t flags = kFlagNone;
};

struct StationSeries {
  std::string id;
  geo::GeoPoint location;
  std::vector<StationRecord> records;  ///< ascending time
};

struct ParseLog {
  std::vector<std::string> messages;
  std::size_t skipped_rows = 0;
  std::vector<std::string> excluded_stations;
};

/// Parses one CSV in the documented schema (station_id,timestamp,lat,lon plus
/// any subset of the variable codes). Malformed rows are skipped and logged;
/// stations without any dd/ff/gff value are excluded. Missing mandatory
/// columns reject the file with DataError.
std::vector<StationSeries> parse_station_csv(const std::filesystem::path& path, ParseLog* log = nullptr);
std::vector<StationSeries> parse_station_csv_text(std::string_view text, ParseLog* log = nullptr);

/// Writes series in the same schema, all variable columns, shortest
/// round-trip number formatting.
std::string station_csv_text(const std::vector<StationSeries>& series);
void write_station_csv(const std::filesystem::path& path, const std::vector<StationSeries>& series);

/// All stations on one regular time axis.
class Dataset {
 public:
  Dataset() = default;
  Dataset(std::vector<geo::StationSite> stations, Timestamp start, std::size_t steps);

  /// Builds the common axis spanning every record; gaps become NaN.
  static Dataset from_series(const std::vector<StationSeries>& series);

  const std::vector<geo::StationSite>& stations() const { return stations_; }
  std::size_t station_count() const { return stations_.size(); }
  std::optional<std::size_t> find(const std::string& id) const;
  Timestamp start() const { return start_; }
  std::size_t steps() const { return steps_; }
  Timestamp time_at(std::size_t step) const { return start_ + static_cast<Timestamp>(step) * kStepSeconds; }

  double value(std::size_t station, std::size_t step, std::size_t var) const {
    return values_[(station * steps_ + step) * kNumVariables + var];
  }
  void set(std::size_t station, std::size_t step, std::size_t var, double v) {
    values_[(station * steps_ + step) * kNumVariables + var] = v;
  }

  /// Copy with the observations of the listed stations blanked out (the
  /// station metadata is kept).
  Dataset without_observations(const std::set<std::string>& ids) const;
  std::vector<StationSeries> to_series() const;

 private:
  std::vector<geo::StationSite> stations_;
  Timestamp start_ = 0;
  std::size_t steps_ = 0;
  std::vector<double> values_;
};

/// Desk-scale substitute for the station archive: a smooth spatio-temporal
/// wind field sampled at station locations with observation noise.
struct SyntheticConfig {
  geo::GridSpec grid{51.0, 53.5, 3.5, 7.0, 5, 5};
  std::size_t n_real = 12;
  std::size_t n_withheld = 4;
  std::size_t steps = 8000;
  Timestamp start = 1609459200;  // 2021-01-01T00:00:00Z
  double mean_speed = 6.0;             ///< m/s
  double speed_log_sd = 0.35;          ///< spatio-temporal variability of log speed
  double speed_persistence = 0.995;    ///< per-step AR(1) coefficient of latent speed
  double diurnal_speed_amplitude = 0.2;
  double coastal_speed_gradient = 0.25; ///< relative increase of mean speed towards the western edge
  double mean_direction = 225.0;       ///< degrees
  double direction_drift_amplitude = 60.0;
  double direction_drift_period_steps = 1008.0;  ///< one week
  double direction_perturbation = 30.0;          ///< degrees, spatially correlated part
  double direction_persistence = 0.99;
  double gust_factor = 0.35;
  double correlation_length_km = 80.0;
  double noise_scale = 1.0;  ///< scales every observation-noise term
  std::size_t latent_sources = 16;
  std::uint64_t seed = 7;

  void validate() const;
};

struct SyntheticDataset {
  Dataset observed;                          ///< every station, including the withheld ones
  std::vector<std::string> withheld_ids;     ///< the suggested split
  std::vector<geo::GeoPoint> cell_centers;   ///< row-major
  /// Noise-free (dd, ff) at each cell centre for every step: [cell][step][2].
  std::vector<double> cell_truth;
  std::uint64_t hash = 0;
};

SyntheticDataset generate_synthetic(const SyntheticConfig& cfg);

/// FNV-1a 64-bit over station ids, coordinates, the time axis and the raw
/// value bits.
std::uint64_t dataset_hash(const Dataset& d);

struct Split {
  std::vector<std::string> train_ids;
  std::vector<std::string> withheld_ids;
  std::set<std::string> withheld_set() const { return {withheld_ids.begin(), withheld_ids.end()}; }
};

/// Explicit partition. Unknown or duplicate ids raise ConfigError.
Split split_stations(const std::vector<std::string>& station_ids, const std::vector<std::string>& withheld_ids);
/// Seeded partition drawing `withheld_count` stations.
Split split_stations(const std::vector<std::string>& station_ids, std::size_t withheld_count, std::uint64_t seed);

/// Counter-based random numbers: the value depends only on the arguments.
double hash_uniform(std::uint64_t seed, std::uint64_t stream, std::uint64_t a, std::uint64_t b = 0);
double hash_normal(std::uint64_t seed, std::uint64_t stream, std::uint64_t a, std::uint64_t b = 0);

}  // namespace contravirt::data
