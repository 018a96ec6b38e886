#pragma once

#include <compare>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "contravirt/matrix.hpp"

// Grid placement, real/virtual node sets, and the base kNN graph.

namespace contravirt::geo {

inline constexpr double kEarthRadiusKm = 6371.0088;

struct GeoPoint {
  double lat = 0.0;  ///< degrees, [-90, 90]
  double lon = 0.0;  ///< degrees, [-180, 180]

  bool valid() const;
  friend bool operator==(const GeoPoint&, const GeoPoint&) = default;
};

/// Great-circle distance on a spherical Earth.
double haversine_km(const GeoPoint& a, const GeoPoint& b);

struct Cell {
  std::size_t row = 0;
  std::size_t col = 0;
  friend auto operator<=>(const Cell&, const Cell&) = default;
};

/// Regular lat/lon grid. Row 0 is the southern-most band, column 0 the
/// western-most.
struct GridSpec {
  double lat_min = 0.0;
  double lat_max = 1.0;
  double lon_min = 0.0;
  double lon_max = 1.0;
  std::size_t rows = 1;
  std::size_t cols = 1;

  void validate() const;
  std::size_t cell_count() const { return rows * cols; }
  std::size_t cell_index(const Cell& c) const { return c.row * cols + c.col; }
  GeoPoint cell_center(const Cell& c) const;
  bool contains(const GeoPoint& p) const;
};

/// Half-open cells [edge, next_edge) on both axes; points on the northern or
/// eastern boundary belong to the last cell. Throws PlacementError for points
/// outside the box.
Cell assign_cell(const GeoPoint& p, const GridSpec& grid);
std::vector<Cell> assign_cells(std::span<const GeoPoint> points, const GridSpec& grid);

enum class NodeKind { Real, Virtual };
enum class NodeOrigin { Station, TestReplacement, CellCenter };

std::string to_string(NodeKind k);
std::string to_string(NodeOrigin o);

struct Node {
  std::size_t id = 0;
  NodeKind kind = NodeKind::Virtual;
  GeoPoint location;
  Cell cell;
  NodeOrigin origin = NodeOrigin::CellCenter;
  std::string station_id;  ///< empty for CellCenter nodes
};

struct StationSite {
  std::string id;
  GeoPoint location;
};

/// One node per grid cell in row-major cell order; node id equals the cell
/// index.
class NodeSet {
 public:
  NodeSet() = default;
  explicit NodeSet(std::vector<Node> nodes);

  const std::vector<Node>& nodes() const { return nodes_; }
  const Node& operator[](std::size_t i) const { return nodes_[i]; }
  std::size_t size() const { return nodes_.size(); }

  /// Node ids of real nodes, ascending.
  const std::vector<std::size_t>& real() const { return real_; }
  /// Node ids of virtual nodes, ascending.
  const std::vector<std::size_t>& virtual_nodes() const { return virtual_; }
  std::vector<NodeKind> kinds() const;

  /// Position of node `id` within real() / virtual_nodes(), or nullopt.
  std::optional<std::size_t> real_ordinal(std::size_t id) const;
  std::optional<std::size_t> virtual_ordinal(std::size_t id) const;
  std::optional<std::size_t> find_station(const std::string& station_id) const;

 private:
  std::vector<Node> nodes_;
  std::vector<std::size_t> real_;
  std::vector<std::size_t> virtual_;
  std::vector<long> ordinal_;
};

/// Training stations become Real nodes, withheld stations Virtual
/// TestReplacement nodes at their own coordinates, and every empty cell a
/// Virtual CellCenter node. Throws DataError when two stations share a cell or
/// a withheld id is unknown.
NodeSet build_node_set(std::span<const StationSite> stations, const GridSpec& grid,
                       const std::set<std::string>& withheld_ids);

/// The `k` points nearest to `from` among `candidates`, ties by position in
/// `candidates`. Candidates for which `skip` is true are ignored.
std::vector<std::size_t> nearest(const GeoPoint& from, std::span<const GeoPoint> candidates, std::size_t k,
                                 std::optional<std::size_t> skip = std::nullopt);

/// Symmetric binary kNN adjacency, zero diagonal. Directed kNN by haversine
/// distance (ties by lower node id), symmetrised by max.
Matrix knn_adjacency(const NodeSet& nodes, std::size_t k);

/// CSV with header id,kind,lat,lon,cell_row,cell_col,origin,station_id.
std::string node_set_csv(const NodeSet& nodes);

}  // namespace contravirt::geo
