#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <random>

#include "contravirt/errors.hpp"
#include "contravirt/geo_graph.hpp"

using namespace contravirt;
using namespace contravirt::geo;

namespace {

const GridSpec kNineByNine{50.7, 53.6, 3.3, 7.3, 9, 9};

std::vector<StationSite> stations_at_cells(const GridSpec& g, std::size_t count) {
  std::vector<StationSite> out;
  for (std::size_t c = 0; c < count; ++c) {
    const Cell cell{c / g.cols, c % g.cols};
    out.push_back({"S" + std::to_string(c), g.cell_center(cell)});
  }
  return out;
}

}  // namespace

TEST_CASE("haversine distances") {
  CHECK(haversine_km({52.0, 5.0}, {52.0, 5.0}) == 0.0);
  // One degree of latitude on the mean sphere.
  CHECK(haversine_km({0.0, 0.0}, {1.0, 0.0}) == doctest::Approx(kEarthRadiusKm * 3.141592653589793 / 180.0));
  CHECK(haversine_km({52.0, 4.0}, {52.5, 6.0}) == doctest::Approx(haversine_km({52.5, 6.0}, {52.0, 4.0})));
}

TEST_CASE("cell assignment") {
  CHECK(kNineByNine.cell_count() == 81);
  const GridSpec one{0.0, 1.0, 0.0, 1.0, 1, 1};
  for (double lat : {0.0, 0.3, 1.0})
    for (double lon : {0.0, 0.7, 1.0}) CHECK(assign_cell({lat, lon}, one) == Cell{0, 0});

  const GridSpec two{0.0, 2.0, 0.0, 2.0, 2, 2};
  CHECK(assign_cell({1.0, 1.0}, two) == Cell{1, 1});  // interior boundary goes up
  CHECK(assign_cell({0.999, 1.0}, two) == Cell{0, 1});
  CHECK(assign_cell({2.0, 2.0}, two) == Cell{1, 1});  // outer edge stays inside
  CHECK_THROWS_AS(assign_cell({2.5, 1.0}, two), PlacementError);
  CHECK_THROWS_AS(GridSpec({1.0, 0.0, 0.0, 1.0, 1, 1}).validate(), ConfigError);
}

TEST_CASE("node sets") {
  SUBCASE("33 stations, 8 withheld on a 9x9 grid") {
    const auto st = stations_at_cells(kNineByNine, 33);
    std::set<std::string> withheld;
    for (std::size_t i = 0; i < 8; ++i) withheld.insert(st[i * 4].id);
    const NodeSet ns = build_node_set(st, kNineByNine, withheld);
    CHECK(ns.size() == 81);
    CHECK(ns.real().size() == 25);
    CHECK(ns.virtual_nodes().size() == 56);
    std::size_t tr = 0;
    for (const auto& n : ns.nodes()) tr += n.origin == NodeOrigin::TestReplacement;
    CHECK(tr == 8);
  }
  SUBCASE("every cell filled, nothing withheld") {
    const GridSpec g{0.0, 1.0, 0.0, 1.0, 2, 2};
    const NodeSet ns = build_node_set(stations_at_cells(g, 4), g, {});
    CHECK(ns.real().size() == 4);
    CHECK(ns.virtual_nodes().empty());
  }
  SUBCASE("4 stations, 1 withheld, 2x2 grid") {
    const GridSpec g{0.0, 1.0, 0.0, 1.0, 2, 2};
    const auto st = stations_at_cells(g, 4);
    const NodeSet ns = build_node_set(st, g, {"S2"});
    CHECK(ns.real().size() == 3);
    REQUIRE(ns.virtual_nodes().size() == 1);
    const Node& v = ns[ns.virtual_nodes()[0]];
    CHECK(v.origin == NodeOrigin::TestReplacement);
    CHECK(v.location == st[2].location);
    CHECK(v.station_id == "S2");
  }
  SUBCASE("errors") {
    const GridSpec g{0.0, 1.0, 0.0, 1.0, 1, 2};
    std::vector<StationSite> st{{"A", {0.5, 0.2}}, {"B", {0.6, 0.3}}};
    CHECK_THROWS_AS(build_node_set(st, g, {}), DataError);
    CHECK_THROWS_AS(build_node_set(stations_at_cells(g, 2), g, {"nope"}), DataError);
  }
}

TEST_CASE("kNN adjacency against brute-force distances") {
  SUBCASE("collinear, k = 1") {
    const GridSpec g{0.0, 1.0, 0.0, 4.0, 1, 4};
    const NodeSet ns = build_node_set(stations_at_cells(g, 4), g, {});
    const Matrix a = knn_adjacency(ns, 1);
    // Ends point inwards; the middle pair ties and picks the lower id.
    const Matrix expected{{0, 1, 0, 0}, {1, 0, 1, 0}, {0, 1, 0, 1}, {0, 0, 1, 0}};
    CHECK(a == expected);
  }
  SUBCASE("random points, k = 3") {
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<Node> nodes;
    for (std::size_t c = 0; c < 25; ++c) {
      const Cell cell{c / 5, c % 5};
      const GeoPoint p{50.0 + (cell.row + u(rng)) * 0.8, 3.0 + (cell.col + u(rng)) * 1.0};
      nodes.push_back({c, NodeKind::Virtual, p, cell, NodeOrigin::CellCenter, ""});
    }
    const NodeSet ns(nodes);
    const Matrix a = knn_adjacency(ns, 3);
    Matrix ref(25, 25);
    for (std::size_t i = 0; i < 25; ++i) {
      std::vector<std::pair<double, std::size_t>> d;
      for (std::size_t j = 0; j < 25; ++j)
        if (j != i) d.emplace_back(haversine_km(nodes[i].location, nodes[j].location), j);
      std::sort(d.begin(), d.end());
      for (std::size_t k = 0; k < 3; ++k) ref(i, d[k].second) = ref(d[k].second, i) = 1.0;
    }
    CHECK(a == ref);
    CHECK(a == transpose(a));
  }
  SUBCASE("k = N - 1 gives the complete graph") {
    const GridSpec g{0.0, 1.0, 0.0, 1.0, 2, 3};
    const NodeSet ns = build_node_set(stations_at_cells(g, 6), g, {});
    const Matrix a = knn_adjacency(ns, 5);
    for (std::size_t i = 0; i < 6; ++i)
      for (std::size_t j = 0; j < 6; ++j) CHECK(a(i, j) == (i == j ? 0.0 : 1.0));
  }
}

TEST_CASE("nearest honours skip and ties") {
  const std::vector<GeoPoint> c{{0, 1}, {0, -1}, {0, 2}, {0, 0}};
  CHECK(nearest({0, 0}, c, 2) == std::vector<std::size_t>{3, 0});
  CHECK(nearest({0, 0}, c, 2, 3) == std::vector<std::size_t>{0, 1});
}

TEST_CASE("node CSV") {
  const GridSpec g{0.0, 1.0, 0.0, 1.0, 1, 2};
  const std::vector<StationSite> st{{"A", {0.5, 0.25}}};
  const NodeSet ns = build_node_set(st, g, {});
  const std::string csv = node_set_csv(ns);
  CHECK(csv.rfind("id,kind,lat,lon,cell_row,cell_col,origin,station_id\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
}
