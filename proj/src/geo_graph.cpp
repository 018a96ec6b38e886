#include "contravirt/geo_graph.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "contravirt/errors.hpp"
#include "contravirt/format.hpp"

namespace contravirt::geo {

namespace {
constexpr double kDegToRad = std::numbers::pi / 180.0;
}

bool GeoPoint::valid() const {
  return std::isfinite(lat) && std::isfinite(lon) && lat >= -90.0 && lat <= 90.0 && lon >= -180.0 && lon <= 180.0;
}

double haversine_km(const GeoPoint& a, const GeoPoint& b) {
  const double phi1 = a.lat * kDegToRad, phi2 = b.lat * kDegToRad;
  const double dphi = (b.lat - a.lat) * kDegToRad;
  const double dlambda = (b.lon - a.lon) * kDegToRad;
  const double s1 = std::sin(dphi / 2.0), s2 = std::sin(dlambda / 2.0);
  const double h = s1 * s1 + std::cos(phi1) * std::cos(phi2) * s2 * s2;
  return 2.0 * kEarthRadiusKm * std::asin(std::min(1.0, std::sqrt(h)));
}

void GridSpec::validate() const {
  if (!(lat_min < lat_max) || !(lon_min < lon_max)) throw ConfigError("grid bbox must satisfy min < max");
  if (!GeoPoint{lat_min, lon_min}.valid() || !GeoPoint{lat_max, lon_max}.valid()) {
    throw ConfigError("grid bbox outside valid coordinates");
  }
  if (rows < 1 || cols < 1) throw ConfigError("grid needs at least one row and one column");
}

GeoPoint GridSpec::cell_center(const Cell& c) const {
  const double dlat = (lat_max - lat_min) / static_cast<double>(rows);
  const double dlon = (lon_max - lon_min) / static_cast<double>(cols);
  return {lat_min + (static_cast<double>(c.row) + 0.5) * dlat, lon_min + (static_cast<double>(c.col) + 0.5) * dlon};
}

bool GridSpec::contains(const GeoPoint& p) const {
  return p.lat >= lat_min && p.lat <= lat_max && p.lon >= lon_min && p.lon <= lon_max;
}

namespace {

// Index of the half-open band containing v; the upper boundary joins the last band.
std::size_t band(double v, double lo, double hi, std::size_t n) {
  auto edge = [&](std::size_t i) { return lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n); };
  auto idx = static_cast<std::size_t>(std::floor((v - lo) / (hi - lo) * static_cast<double>(n)));
  idx = std::min(idx, n - 1);
  while (idx + 1 < n && v >= edge(idx + 1)) ++idx;
  while (idx > 0 && v < edge(idx)) --idx;
  return idx;
}

}  // namespace

Cell assign_cell(const GeoPoint& p, const GridSpec& grid) {
  if (!p.valid() || !grid.contains(p)) {
    throw PlacementError("point (" + format_double(p.lat) + ", " + format_double(p.lon) + ") outside grid bbox");
  }
  return {band(p.lat, grid.lat_min, grid.lat_max, grid.rows), band(p.lon, grid.lon_min, grid.lon_max, grid.cols)};
}

std::vector<Cell> assign_cells(std::span<const GeoPoint> points, const GridSpec& grid) {
  grid.validate();
  std::vector<Cell> out;
  out.reserve(points.size());
  for (const auto& p : points) out.push_back(assign_cell(p, grid));
  return out;
}

std::string to_string(NodeKind k) { return k == NodeKind::Real ? "real" : "virtual"; }

std::string to_string(NodeOrigin o) {
  switch (o) {
    case NodeOrigin::Station: return "station";
    case NodeOrigin::TestReplacement: return "test_replacement";
    case NodeOrigin::CellCenter: return "cell_center";
  }
  return "unknown";
}

NodeSet::NodeSet(std::vector<Node> nodes) : nodes_(std::move(nodes)), ordinal_(nodes_.size(), -1) {
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].id != i) throw ContractError("node ids must equal their position");
    auto& bucket = nodes_[i].kind == NodeKind::Real ? real_ : virtual_;
    ordinal_[i] = static_cast<long>(bucket.size());
    bucket.push_back(i);
  }
}

std::vector<NodeKind> NodeSet::kinds() const {
  std::vector<NodeKind> out;
  out.reserve(nodes_.size());
  for (const auto& n : nodes_) out.push_back(n.kind);
  return out;
}

std::optional<std::size_t> NodeSet::real_ordinal(std::size_t id) const {
  if (id >= nodes_.size() || nodes_[id].kind != NodeKind::Real) return std::nullopt;
  return static_cast<std::size_t>(ordinal_[id]);
}

std::optional<std::size_t> NodeSet::virtual_ordinal(std::size_t id) const {
  if (id >= nodes_.size() || nodes_[id].kind != NodeKind::Virtual) return std::nullopt;
  return static_cast<std::size_t>(ordinal_[id]);
}

std::optional<std::size_t> NodeSet::find_station(const std::string& station_id) const {
  for (const auto& n : nodes_)
    if (!station_id.empty() && n.station_id == station_id) return n.id;
  return std::nullopt;
}

NodeSet build_node_set(std::span<const StationSite> stations, const GridSpec& grid,
                       const std::set<std::string>& withheld_ids) {
  grid.validate();
  std::set<std::string> known;
  for (const auto& s : stations) {
    if (!known.insert(s.id).second) throw DataError("duplicate station id " + s.id);
  }
  for (const auto& w : withheld_ids) {
    if (!known.contains(w)) throw DataError("withheld station " + w + " is not in the station list");
  }
  std::vector<long> occupant(grid.cell_count(), -1);
  for (std::size_t i = 0; i < stations.size(); ++i) {
    const Cell c = assign_cell(stations[i].location, grid);
    const std::size_t idx = grid.cell_index(c);
    if (occupant[idx] >= 0) {
      throw DataError("stations " + stations[static_cast<std::size_t>(occupant[idx])].id + " and " + stations[i].id +
                      " fall in the same grid cell (" + std::to_string(c.row) + "," + std::to_string(c.col) + ")");
    }
    occupant[idx] = static_cast<long>(i);
  }
  std::vector<Node> nodes;
  nodes.reserve(grid.cell_count());
  for (std::size_t r = 0; r < grid.rows; ++r) {
    for (std::size_t c = 0; c < grid.cols; ++c) {
      const Cell cell{r, c};
      Node n;
      n.id = grid.cell_index(cell);
      n.cell = cell;
      const long occ = occupant[n.id];
      if (occ < 0) {
        n.kind = NodeKind::Virtual;
        n.origin = NodeOrigin::CellCenter;
        n.location = grid.cell_center(cell);
      } else {
        const auto& s = stations[static_cast<std::size_t>(occ)];
        n.station_id = s.id;
        n.location = s.location;
        if (withheld_ids.contains(s.id)) {
          n.kind = NodeKind::Virtual;
          n.origin = NodeOrigin::TestReplacement;
        } else {
          n.kind = NodeKind::Real;
          n.origin = NodeOrigin::Station;
        }
      }
      nodes.push_back(std::move(n));
    }
  }
  return NodeSet(std::move(nodes));
}

std::vector<std::size_t> nearest(const GeoPoint& from, std::span<const GeoPoint> candidates, std::size_t k,
                                 std::optional<std::size_t> skip) {
  std::vector<std::pair<double, std::size_t>> dist;
  dist.reserve(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (skip && *skip == i) continue;
    dist.emplace_back(haversine_km(from, candidates[i]), i);
  }
  const std::size_t take = std::min(k, dist.size());
  std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(take), dist.end());
  std::vector<std::size_t> out;
  out.reserve(take);
  for (std::size_t i = 0; i < take; ++i) out.push_back(dist[i].second);
  return out;
}

Matrix knn_adjacency(const NodeSet& nodes, std::size_t k) {
  const std::size_t n = nodes.size();
  if (k < 1 || k >= n) {
    throw ConfigError("knn k must satisfy 1 <= k < N (k=" + std::to_string(k) + ", N=" + std::to_string(n) + ")");
  }
  std::vector<GeoPoint> pts;
  pts.reserve(n);
  for (const auto& node : nodes.nodes()) pts.push_back(node.location);
  Matrix a(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j : nearest(pts[i], pts, k, i)) {
      a(i, j) = 1.0;
      a(j, i) = 1.0;
    }
  }
  return a;
}

std::string node_set_csv(const NodeSet& nodes) {
  std::ostringstream out;
  out << "id,kind,lat,lon,cell_row,cell_col,origin,station_id\n";
  for (const auto& n : nodes.nodes()) {
    out << n.id << ',' << to_string(n.kind) << ',' << format_double(n.location.lat) << ','
        << format_double(n.location.lon) << ',' << n.cell.row << ',' << n.cell.col << ',' << to_string(n.origin)
        << ',' << n.station_id << '\n';
  }
  return out.str();
}

}  // namespace contravirt::geo
