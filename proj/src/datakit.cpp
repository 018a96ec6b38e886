#include "contravirt/datakit.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>

#include "contravirt/errors.hpp"
#include "contravirt/format.hpp"

namespace contravirt::data {

namespace {

// Howard Hinnant's civil-date algorithms.
std::int64_t days_from_civil(std::int64_t y, unsigned m, unsigned d) {
  y -= m <= 2;
  const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
  const auto yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

void civil_from_days(std::int64_t z, int& y, int& m, int& d) {
  z += 719468;
  const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
  const auto doe = static_cast<unsigned>(z - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  const std::int64_t yy = static_cast<std::int64_t>(yoe) + era * 400;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  d = static_cast<int>(doy - (153 * mp + 2) / 5 + 1);
  m = static_cast<int>(mp < 10 ? mp + 3 : mp - 9);
  y = static_cast<int>(yy + (m <= 2));
}

std::int64_t floor_div(std::int64_t a, std::int64_t b) { return a / b - ((a % b != 0) && ((a < 0) != (b < 0))); }

bool parse_int(std::string_view s, int& out) {
  auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc() && res.ptr == s.data() + s.size();
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (true) {
    const std::size_t next = line.find(',', pos);
    out.push_back(trim(line.substr(pos, next == std::string_view::npos ? std::string_view::npos : next - pos)));
    if (next == std::string_view::npos) break;
    pos = next + 1;
  }
  return out;
}

bool is_missing_token(std::string_view s) {
  return s.empty() || s == "NA" || s == "NaN" || s == "nan" || s == "-";
}

bool parse_double(std::string_view s, double& out) {
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc() && res.ptr == s.data() + s.size() && std::isfinite(out);
}

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

}  // namespace

Timestamp to_timestamp(const CivilTime& c) {
  const std::int64_t days = days_from_civil(c.year, static_cast<unsigned>(c.month), static_cast<unsigned>(c.day));
  return days * 86400 + c.hour * 3600 + c.minute * 60 + c.second;
}

CivilTime to_civil(Timestamp t) {
  CivilTime c;
  const std::int64_t days = floor_div(t, 86400);
  std::int64_t rem = t - days * 86400;
  civil_from_days(days, c.year, c.month, c.day);
  c.hour = static_cast<int>(rem / 3600);
  rem %= 3600;
  c.minute = static_cast<int>(rem / 60);
  c.second = static_cast<int>(rem % 60);
  return c;
}

Timestamp parse_timestamp(std::string_view text) {
  text = trim(text);
  if (!text.empty() && text.back() == 'Z') text.remove_suffix(1);
  // YYYY-MM-DD[T ]HH:MM[:SS]
  if (text.size() < 16 || text[4] != '-' || text[7] != '-' || (text[10] != 'T' && text[10] != ' ') ||
      text[13] != ':') {
    throw DataError("malformed timestamp '" + std::string(text) + "'");
  }
  CivilTime c;
  bool ok = parse_int(text.substr(0, 4), c.year) && parse_int(text.substr(5, 2), c.month) &&
            parse_int(text.substr(8, 2), c.day) && parse_int(text.substr(11, 2), c.hour) &&
            parse_int(text.substr(14, 2), c.minute);
  if (text.size() > 16) ok = ok && text.size() == 19 && text[16] == ':' && parse_int(text.substr(17, 2), c.second);
  if (!ok || c.month < 1 || c.month > 12 || c.day < 1 || c.day > 31 || c.hour > 23 || c.minute > 59 || c.second > 60) {
    throw DataError("malformed timestamp '" + std::string(text) + "'");
  }
  return to_timestamp(c);
}

std::string format_timestamp(Timestamp t) {
  const CivilTime c = to_civil(t);
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%04d-%02d-%02dT%02d:%02d:%02dZ", c.year, c.month, c.day, c.hour, c.minute,
                c.second);
  return buf;
}

std::optional<Timestamp> snap_to_step(Timestamp t) {
  const Timestamp lower = floor_div(t, kStepSeconds) * kStepSeconds;
  const Timestamp upper = lower + kStepSeconds;
  if (t - lower <= 60) return lower;
  if (upper - t <= 60) return upper;
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// CSV

std::vector<StationSeries> parse_station_csv_text(std::string_view text, ParseLog* log) {
  ParseLog local;
  ParseLog& lg = log != nullptr ? *log : local;
  std::vector<StationSeries> out;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) {
    lg.messages.push_back("warning: empty file");
    return out;
  }
  ++line_no;
  const auto header = split_commas(line);
  long col_station = -1, col_time = -1, col_lat = -1, col_lon = -1;
  std::vector<long> var_col(kNumVariables, -1);
  for (std::size_t i = 0; i < header.size(); ++i) {
    const auto h = header[i];
    if (h == "station_id") col_station = static_cast<long>(i);
    else if (h == "timestamp") col_time = static_cast<long>(i);
    else if (h == "lat") col_lat = static_cast<long>(i);
    else if (h == "lon") col_lon = static_cast<long>(i);
    else {
      auto it = std::find(kVariableCodes.begin(), kVariableCodes.end(), h);
      if (it != kVariableCodes.end()) {
        var_col[static_cast<std::size_t>(it - kVariableCodes.begin())] = static_cast<long>(i);
      } else {
        lg.messages.push_back("warning: ignoring unknown column '" + std::string(h) + "'");
      }
    }
  }
  if (col_station < 0 || col_time < 0 || col_lat < 0 || col_lon < 0) {
    throw DataError("missing mandatory column (station_id, timestamp, lat, lon required)");
  }
  std::map<std::string, std::size_t> index;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto cells = split_commas(line);
    auto skip = [&](const std::string& why) {
      ++lg.skipped_rows;
      lg.messages.push_back("line " + std::to_string(line_no) + ": skipped, " + why);
    };
    if (cells.size() != header.size()) {
      skip("expected " + std::to_string(header.size()) + " fields, got " + std::to_string(cells.size()));
      continue;
    }
    StationRecord rec;
    rec.station_id = std::string(cells[static_cast<std::size_t>(col_station)]);
    if (rec.station_id.empty()) {
      skip("empty station_id");
      continue;
    }
    Timestamp raw = 0;
    try {
      raw = parse_timestamp(cells[static_cast<std::size_t>(col_time)]);
    } catch (const DataError& e) {
      skip(e.what());
      continue;
    }
    const auto snapped = snap_to_step(raw);
    if (!snapped) {
      skip("timestamp not within 60 s of the 10-minute grid");
      continue;
    }
    rec.time = *snapped;
    if (*snapped != raw) rec.flags |= kFlagSnapped;
    double lat = 0.0, lon = 0.0;
    if (!parse_double(cells[static_cast<std::size_t>(col_lat)], lat) ||
        !parse_double(cells[static_cast<std::size_t>(col_lon)], lon) || !geo::GeoPoint{lat, lon}.valid()) {
      skip("invalid coordinates");
      continue;
    }
    bool bad_number = false;
    for (std::size_t v = 0; v < kNumVariables; ++v) {
      rec.values[v] = kNaN;
      if (var_col[v] < 0) continue;
      const auto cell = cells[static_cast<std::size_t>(var_col[v])];
      if (is_missing_token(cell)) continue;
      double x = 0.0;
      if (!parse_double(cell, x)) {
        bad_number = true;
        break;
      }
      rec.values[v] = x;
    }
    if (bad_number) {
      skip("unparseable number");
      continue;
    }
    double& dd = rec.values[kDd];
    if (!std::isnan(dd)) {
      if (dd == 360.0) {
        dd = 0.0;
        rec.flags |= kFlagDirectionWrapped;
      } else if (dd < 0.0 || dd > 360.0) {
        dd = kNaN;
        rec.flags |= kFlagOutOfRange;
      }
    }
    for (std::size_t v : {kFf, kGff}) {
      if (!std::isnan(rec.values[v]) && rec.values[v] < 0.0) {
        rec.values[v] = kNaN;
        rec.flags |= kFlagOutOfRange;
      }
    }
    if (!std::isnan(rec.values[kFf]) && !std::isnan(rec.values[kGff]) && rec.values[kGff] < rec.values[kFf]) {
      rec.flags |= kFlagGustBelowSpeed;
    }
    auto [it, inserted] = index.try_emplace(rec.station_id, out.size());
    if (inserted) out.push_back(StationSeries{rec.station_id, {lat, lon}, {}});
    out[it->second].records.push_back(std::move(rec));
  }
  std::vector<StationSeries> kept;
  for (auto& s : out) {
    std::stable_sort(s.records.begin(), s.records.end(),
                     [](const StationRecord& a, const StationRecord& b) { return a.time < b.time; });
    const bool has_wind = std::any_of(s.records.begin(), s.records.end(), [](const StationRecord& r) {
      return !std::isnan(r.values[kDd]) || !std::isnan(r.values[kFf]) || !std::isnan(r.values[kGff]);
    });
    if (!has_wind) {
      lg.excluded_stations.push_back(s.id);
      lg.messages.push_back("station " + s.id + " excluded: no wind-related variables recorded");
      continue;
    }
    kept.push_back(std::move(s));
  }
  return kept;
}

std::vector<StationSeries> parse_station_csv(const std::filesystem::path& path, ParseLog* log) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_station_csv_text(buf.str(), log);
}

std::string station_csv_text(const std::vector<StationSeries>& series) {
  std::string out = "station_id,timestamp,lat,lon";
  for (auto code : kVariableCodes) {
    out += ',';
    out += code;
  }
  out += '\n';
  for (const auto& s : series) {
    const std::string prefix = s.id;
    const std::string coords = format_double(s.location.lat) + "," + format_double(s.location.lon);
    for (const auto& r : s.records) {
      out += prefix;
      out += ',';
      out += format_timestamp(r.time);
      out += ',';
      out += coords;
      for (double v : r.values) {
        out += ',';
        if (!std::isnan(v)) out += format_double(v);
      }
      out += '\n';
    }
  }
  return out;
}

void write_station_csv(const std::filesystem::path& path, const std::vector<StationSeries>& series) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << station_csv_text(series);
}

// ---------------------------------------------------------------------------
// Dataset

Dataset::Dataset(std::vector<geo::StationSite> stations, Timestamp start, std::size_t steps)
    : stations_(std::move(stations)),
      start_(start),
      steps_(steps),
      values_(stations_.size() * steps * kNumVariables, kNaN) {}

Dataset Dataset::from_series(const std::vector<StationSeries>& series) {
  std::vector<geo::StationSite> sites;
  Timestamp lo = std::numeric_limits<Timestamp>::max(), hi = std::numeric_limits<Timestamp>::min();
  for (const auto& s : series) {
    sites.push_back({s.id, s.location});
    for (const auto& r : s.records) {
      lo = std::min(lo, r.time);
      hi = std::max(hi, r.time);
    }
  }
  if (lo > hi) return Dataset(std::move(sites), 0, 0);
  const auto steps = static_cast<std::size_t>((hi - lo) / kStepSeconds + 1);
  Dataset d(std::move(sites), lo, steps);
  for (std::size_t i = 0; i < series.size(); ++i) {
    for (const auto& r : series[i].records) {
      const auto step = static_cast<std::size_t>((r.time - lo) / kStepSeconds);
      for (std::size_t v = 0; v < kNumVariables; ++v) d.set(i, step, v, r.values[v]);
    }
  }
  return d;
}

std::optional<std::size_t> Dataset::find(const std::string& id) const {
  for (std::size_t i = 0; i < stations_.size(); ++i)
    if (stations_[i].id == id) return i;
  return std::nullopt;
}

Dataset Dataset::without_observations(const std::set<std::string>& ids) const {
  Dataset d = *this;
  for (std::size_t s = 0; s < stations_.size(); ++s) {
    if (!ids.contains(stations_[s].id)) continue;
    std::fill(d.values_.begin() + static_cast<std::ptrdiff_t>(s * steps_ * kNumVariables),
              d.values_.begin() + static_cast<std::ptrdiff_t>((s + 1) * steps_ * kNumVariables), kNaN);
  }
  return d;
}

std::vector<StationSeries> Dataset::to_series() const {
  std::vector<StationSeries> out;
  for (std::size_t s = 0; s < stations_.size(); ++s) {
    StationSeries ser{stations_[s].id, stations_[s].location, {}};
    for (std::size_t t = 0; t < steps_; ++t) {
      StationRecord r;
      r.station_id = stations_[s].id;
      r.time = time_at(t);
      bool any = false;
      for (std::size_t v = 0; v < kNumVariables; ++v) {
        r.values[v] = value(s, t, v);
        any = any || !std::isnan(r.values[v]);
      }
      if (any) ser.records.push_back(std::move(r));
    }
    out.push_back(std::move(ser));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Counter-based noise

namespace {
std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t mix(std::uint64_t seed, std::uint64_t stream, std::uint64_t a, std::uint64_t b) {
  std::uint64_t h = splitmix64(seed);
  h = splitmix64(h ^ stream);
  h = splitmix64(h ^ a);
  return splitmix64(h ^ b);
}
}  // namespace

double hash_uniform(std::uint64_t seed, std::uint64_t stream, std::uint64_t a, std::uint64_t b) {
  // 53 random mantissa bits mapped into (0, 1).
  return (static_cast<double>(mix(seed, stream, a, b) >> 11) + 0.5) * 0x1.0p-53;
}

double hash_normal(std::uint64_t seed, std::uint64_t stream, std::uint64_t a, std::uint64_t b) {
  const double u1 = hash_uniform(seed, stream, a, 2 * b);
  const double u2 = hash_uniform(seed, stream, a, 2 * b + 1);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

// ---------------------------------------------------------------------------
// Synthetic generator

void SyntheticConfig::validate() const {
  grid.validate();
  if (n_real < 1 || n_real > grid.cell_count()) throw ConfigError("n_real must be in [1, rows*cols]");
  if (n_withheld >= n_real) throw ConfigError("n_withheld must be smaller than n_real");
  if (steps < 1) throw ConfigError("steps must be positive");
  if (!(mean_speed > 0.0) || !(speed_log_sd >= 0.0) || !(gust_factor >= 0.0) || !(correlation_length_km > 0.0) ||
      !(noise_scale >= 0.0) || !(direction_drift_period_steps > 0.0)) {
    throw ConfigError("synthetic scales must be positive");
  }
  if (!(speed_persistence >= 0.0 && speed_persistence < 1.0) ||
      !(direction_persistence >= 0.0 && direction_persistence < 1.0)) {
    throw ConfigError("persistence coefficients must lie in [0, 1)");
  }
  if (latent_sources < 1) throw ConfigError("latent_sources must be positive");
}

namespace {

enum Stream : std::uint64_t {
  kStreamCells = 1,
  kStreamOffsets,
  kStreamSources,
  kStreamSpeedLatent,
  kStreamDirLatent,
  kStreamWeatherLatent,
  kStreamObsSpeed,
  kStreamObsDir,
  kStreamGust,
  kStreamMet,
};

struct MetChannel {
  double base, diurnal, weather, noise, lo, hi;
  bool integer;
};

// Order matches kVariableCodes[kFirstMet..].
constexpr std::array<MetChannel, kNumMet> kMetChannels = {{
    {5.0, 3.0, 3.0, 0.2, -30.0, 45.0, false},          // ta
    {80.0, -10.0, 8.0, 2.0, 0.0, 100.0, false},        // rh
    {1013.0, 0.5, 8.0, 0.3, 940.0, 1060.0, false},     // pp
    {20000.0, 3000.0, 8000.0, 1500.0, 0.0, 75000.0, false},  // zm
    {60.0, 120.0, 30.0, 15.0, 0.0, 1200.0, false},     // qg
    {5.0, 0.0, 10.0, 2.0, 0.0, 60.0, false},           // D1H
    {30.0, 0.0, 60.0, 20.0, 0.0, 600.0, false},        // dr
    {1.0, 0.0, 1.5, 0.2, 0.0, 100.0, false},           // R6H
    {2.0, 0.0, 3.0, 0.3, 0.0, 150.0, false},           // R12H
    {4.0, 0.0, 5.0, 0.4, 0.0, 200.0, false},           // R24H
    {0.2, 0.0, 0.4, 0.1, 0.0, 50.0, false},            // rg
    {3.0, 4.0, 3.0, 1.0, 0.0, 10.0, false},            // ss
    {2.0, 1.0, 3.0, 0.3, -35.0, 30.0, false},          // td
    {3.0, 4.0, 3.0, 0.3, -35.0, 40.0, false},          // Tgn
    {2.0, 1.0, 3.0, 0.3, -35.0, 40.0, false},          // Tgn6
    {1.5, 0.7, 3.0, 0.3, -35.0, 40.0, false},          // Tgn12
    {1.0, 0.5, 3.0, 0.3, -35.0, 40.0, false},          // Tgn14
    {4.5, 3.0, 3.0, 0.2, -30.0, 45.0, false},          // Tn
    {3.5, 1.5, 3.0, 0.2, -30.0, 45.0, false},          // Tn6
    {3.0, 1.0, 3.0, 0.2, -30.0, 45.0, false},          // Tn12
    {2.5, 1.0, 3.0, 0.2, -30.0, 45.0, false},          // Tn14
    {5.5, 3.0, 3.0, 0.2, -30.0, 45.0, false},          // Tx
    {7.0, 1.5, 3.0, 0.2, -30.0, 45.0, false},          // Tx6
    {8.0, 1.0, 3.0, 0.2, -30.0, 45.0, false},          // Tx12
    {9.0, 0.5, 3.0, 0.2, -30.0, 45.0, false},          // Tx24
    {10.0, 0.0, 15.0, 5.0, 0.0, 99.0, true},           // ww-10
}};

// Unit-variance AR(1) latent processes, one per source: [source][step].
std::vector<double> latent_processes(std::uint64_t seed, std::uint64_t stream, std::size_t sources, std::size_t steps,
                                     double phi) {
  std::vector<double> a(sources * steps);
  const double innov = std::sqrt(1.0 - phi * phi);
  for (std::size_t m = 0; m < sources; ++m) {
    double x = hash_normal(seed, stream, m, 0);
    for (std::size_t t = 0; t < steps; ++t) {
      if (t > 0) x = phi * x + innov * hash_normal(seed, stream, m, t);
      a[m * steps + t] = x;
    }
  }
  return a;
}

// Normalised Gaussian-kernel weights so that the mixed field has unit variance.
std::vector<double> kernel_weights(const geo::GeoPoint& p, const std::vector<geo::GeoPoint>& sources, double length) {
  std::vector<double> w(sources.size());
  double ss = 0.0;
  for (std::size_t m = 0; m < sources.size(); ++m) {
    const double d = geo::haversine_km(p, sources[m]);
    w[m] = std::exp(-0.5 * (d / length) * (d / length));
    ss += w[m] * w[m];
  }
  if (!(ss > 0.0)) {
    // Far from every source: fall back to the nearest one.
    std::fill(w.begin(), w.end(), 0.0);
    std::size_t best = 0;
    double bd = std::numeric_limits<double>::infinity();
    for (std::size_t m = 0; m < sources.size(); ++m) {
      const double d = geo::haversine_km(p, sources[m]);
      if (d < bd) {
        bd = d;
        best = m;
      }
    }
    w[best] = 1.0;
    return w;
  }
  const double inv = 1.0 / std::sqrt(ss);
  for (auto& v : w) v *= inv;
  return w;
}

double mix_field(const std::vector<double>& w, const std::vector<double>& latent, std::size_t steps, std::size_t t) {
  double s = 0.0;
  for (std::size_t m = 0; m < w.size(); ++m) s += w[m] * latent[m * steps + t];
  return s;
}

double wrap_degrees(double d) {
  d = std::fmod(d, 360.0);
  if (d < 0.0) d += 360.0;
  if (d >= 360.0) d -= 360.0;
  return d;
}

struct SmoothWind {
  double dd;
  double ff;
};

}  // namespace

SyntheticDataset generate_synthetic(const SyntheticConfig& cfg) {
  cfg.validate();
  const auto& g = cfg.grid;
  const std::uint64_t seed = cfg.seed;

  // Distinct cells for the stations, random position inside each.
  std::vector<std::pair<double, std::size_t>> cell_keys;
  for (std::size_t c = 0; c < g.cell_count(); ++c) cell_keys.emplace_back(hash_uniform(seed, kStreamCells, c), c);
  std::sort(cell_keys.begin(), cell_keys.end());
  const double dlat = (g.lat_max - g.lat_min) / static_cast<double>(g.rows);
  const double dlon = (g.lon_max - g.lon_min) / static_cast<double>(g.cols);
  std::vector<std::size_t> chosen;
  for (std::size_t i = 0; i < cfg.n_real; ++i) chosen.push_back(cell_keys[i].second);
  std::sort(chosen.begin(), chosen.end());
  std::vector<geo::StationSite> sites;
  for (std::size_t i = 0; i < chosen.size(); ++i) {
    const geo::Cell cell{chosen[i] / g.cols, chosen[i] % g.cols};
    const geo::GeoPoint center = g.cell_center(cell);
    const double ou = hash_uniform(seed, kStreamOffsets, i, 0) - 0.5;
    const double ov = hash_uniform(seed, kStreamOffsets, i, 1) - 0.5;
    char id[32];
    std::snprintf(id, sizeof(id), "S%02zu", i + 1);
    sites.push_back({id, {center.lat + 0.8 * ou * dlat, center.lon + 0.8 * ov * dlon}});
  }

  // Latent sources scattered over the box with a margin of one cell.
  std::vector<geo::GeoPoint> sources;
  for (std::size_t m = 0; m < cfg.latent_sources; ++m) {
    const double u = hash_uniform(seed, kStreamSources, m, 0);
    const double v = hash_uniform(seed, kStreamSources, m, 1);
    sources.push_back({g.lat_min - dlat + u * (g.lat_max - g.lat_min + 2 * dlat),
                       g.lon_min - dlon + v * (g.lon_max - g.lon_min + 2 * dlon)});
  }
  const std::size_t T = cfg.steps;
  const auto speed_latent = latent_processes(seed, kStreamSpeedLatent, sources.size(), T, cfg.speed_persistence);
  const auto dir_latent = latent_processes(seed, kStreamDirLatent, sources.size(), T, cfg.direction_persistence);
  const auto weather_latent = latent_processes(seed, kStreamWeatherLatent, sources.size(), T, 0.998);

  auto smooth = [&](const geo::GeoPoint& p, const std::vector<double>& w, std::size_t t) {
    const Timestamp ts = cfg.start + static_cast<Timestamp>(t) * kStepSeconds;
    const double tod = static_cast<double>(((ts % 86400) + 86400) % 86400) / 86400.0;
    const double coastal = 1.0 + cfg.coastal_speed_gradient * (g.lon_max - p.lon) / (g.lon_max - g.lon_min);
    const double diurnal = 1.0 + cfg.diurnal_speed_amplitude * std::sin(2.0 * std::numbers::pi * (tod - 0.375));
    const double ff = cfg.mean_speed * coastal * diurnal * std::exp(cfg.speed_log_sd * mix_field(w, speed_latent, T, t));
    const double drift =
        cfg.direction_drift_amplitude * std::sin(2.0 * std::numbers::pi * static_cast<double>(t) / cfg.direction_drift_period_steps);
    const double dd = wrap_degrees(cfg.mean_direction + drift + cfg.direction_perturbation * mix_field(w, dir_latent, T, t));
    return SmoothWind{dd, ff};
  };

  SyntheticDataset out;
  out.observed = Dataset(sites, cfg.start, T);
  const double ns = cfg.noise_scale;
  constexpr double kMeanAbsNormal = 0.7978845608028654;  // E|N(0,1)|
  for (std::size_t s = 0; s < sites.size(); ++s) {
    const auto w = kernel_weights(sites[s].location, sources, cfg.correlation_length_km);
    const double lat_shift = (sites[s].location.lat - 0.5 * (g.lat_min + g.lat_max)) / (g.lat_max - g.lat_min);
    for (std::size_t t = 0; t < T; ++t) {
      const SmoothWind sw = smooth(sites[s].location, w, t);
      const double ff = std::max(0.0, sw.ff + 0.3 * ns * hash_normal(seed, kStreamObsSpeed, s, t));
      const double dd = wrap_degrees(sw.dd + 5.0 * ns * hash_normal(seed, kStreamObsDir, s, t));
      const double gust_noise =
          std::max(0.0, kMeanAbsNormal + ns * (std::abs(hash_normal(seed, kStreamGust, s, t)) - kMeanAbsNormal));
      const double gff = ff * (1.0 + cfg.gust_factor * gust_noise);
      out.observed.set(s, t, kDd, dd);
      out.observed.set(s, t, kFf, ff);
      out.observed.set(s, t, kGff, gff);
      const Timestamp ts = cfg.start + static_cast<Timestamp>(t) * kStepSeconds;
      const double tod = static_cast<double>(((ts % 86400) + 86400) % 86400) / 86400.0;
      const double wx = mix_field(w, weather_latent, T, t);
      for (std::size_t c = 0; c < kNumMet; ++c) {
        const auto& mc = kMetChannels[c];
        double v = mc.base + mc.diurnal * std::sin(2.0 * std::numbers::pi * (tod - 0.375)) + mc.weather * wx -
                   0.5 * mc.weather * lat_shift + mc.noise * ns * hash_normal(seed, kStreamMet + c, s, t);
        v = std::clamp(v, mc.lo, mc.hi);
        if (mc.integer) v = std::round(v);
        out.observed.set(s, t, kFirstMet + c, v);
      }
    }
  }

  std::vector<std::string> ids;
  for (const auto& s : sites) ids.push_back(s.id);
  out.withheld_ids = split_stations(ids, cfg.n_withheld, seed).withheld_ids;

  for (std::size_t r = 0; r < g.rows; ++r)
    for (std::size_t c = 0; c < g.cols; ++c) out.cell_centers.push_back(g.cell_center({r, c}));
  out.cell_truth.resize(out.cell_centers.size() * T * 2);
  for (std::size_t c = 0; c < out.cell_centers.size(); ++c) {
    const auto w = kernel_weights(out.cell_centers[c], sources, cfg.correlation_length_km);
    for (std::size_t t = 0; t < T; ++t) {
      const SmoothWind sw = smooth(out.cell_centers[c], w, t);
      out.cell_truth[(c * T + t) * 2] = sw.dd;
      out.cell_truth[(c * T + t) * 2 + 1] = sw.ff;
    }
  }
  out.hash = dataset_hash(out.observed);
  return out;
}

std::uint64_t dataset_hash(const Dataset& d) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ULL;
    }
  };
  const Timestamp start = d.start();
  const std::uint64_t steps = d.steps();
  feed(&start, sizeof(start));
  feed(&steps, sizeof(steps));
  for (std::size_t s = 0; s < d.station_count(); ++s) {
    const auto& site = d.stations()[s];
    feed(site.id.data(), site.id.size());
    feed(&site.location.lat, sizeof(double));
    feed(&site.location.lon, sizeof(double));
    for (std::size_t t = 0; t < d.steps(); ++t)
      for (std::size_t v = 0; v < kNumVariables; ++v) {
        const double x = d.value(s, t, v);
        feed(&x, sizeof(double));
      }
  }
  return h;
}

// ---------------------------------------------------------------------------
// Splits

Split split_stations(const std::vector<std::string>& station_ids, const std::vector<std::string>& withheld_ids) {
  std::set<std::string> all(station_ids.begin(), station_ids.end());
  if (all.size() != station_ids.size()) throw ConfigError("duplicate station ids");
  std::set<std::string> held;
  for (const auto& w : withheld_ids) {
    if (!all.contains(w)) throw ConfigError("withheld station '" + w + "' is unknown");
    if (!held.insert(w).second) throw ConfigError("withheld station '" + w + "' listed twice");
  }
  Split s;
  for (const auto& id : station_ids)
    (held.contains(id) ? s.withheld_ids : s.train_ids).push_back(id);
  return s;
}

Split split_stations(const std::vector<std::string>& station_ids, std::size_t withheld_count, std::uint64_t seed) {
  if (withheld_count >= station_ids.size() && withheld_count > 0) {
    throw ConfigError("withheld_count must leave at least one training station");
  }
  std::vector<std::pair<double, std::string>> keyed;
  for (std::size_t i = 0; i < station_ids.size(); ++i) {
    std::uint64_t idh = 0;
    for (char c : station_ids[i]) idh = idh * 131 + static_cast<unsigned char>(c);
    keyed.emplace_back(hash_uniform(seed, 0x5eed, idh), station_ids[i]);
  }
  std::sort(keyed.begin(), keyed.end());
  std::vector<std::string> held;
  for (std::size_t i = 0; i < withheld_count; ++i) held.push_back(keyed[i].second);
  return split_stations(station_ids, held);
}

}  // namespace contravirt::data
