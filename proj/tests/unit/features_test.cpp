#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "contravirt/errors.hpp"
#include "contravirt/features.hpp"

using namespace contravirt;
using namespace contravirt::features;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

data::Dataset two_station_dataset(std::size_t steps) {
  return data::Dataset({{"A", {52.0, 5.0}}, {"B", {52.2, 5.3}}}, data::to_timestamp({2021, 1, 1, 0, 0, 0}), steps);
}

}  // namespace

TEST_CASE("geo embedding") {
  const auto e = geo_embed({52.5, 4.6});
  CHECK(e[0] == doctest::Approx(0.79335).epsilon(1e-4));
  CHECK(e[1] == doctest::Approx(0.60876).epsilon(1e-4));
  CHECK(e[2] == doctest::Approx(0.08020).epsilon(1e-3));
  CHECK(e[3] == doctest::Approx(0.99678).epsilon(1e-4));
}

TEST_CASE("time embedding") {
  const auto midnight = time_embed(data::to_timestamp({2021, 1, 1, 0, 0, 0}));
  CHECK(midnight[0] == doctest::Approx(0.0));
  CHECK(midnight[1] == doctest::Approx(1.0));
  CHECK(midnight[2] == doctest::Approx(0.0));
  CHECK(midnight[3] == doctest::Approx(1.0));
  const auto noon = time_embed(data::to_timestamp({2021, 3, 5, 12, 0, 0}));
  CHECK(std::abs(noon[0]) < 1e-12);
  CHECK(noon[1] == doctest::Approx(-1.0));
  const auto evening = time_embed(data::to_timestamp({2021, 3, 5, 18, 0, 0}));
  CHECK(evening[0] == doctest::Approx(-1.0));
  CHECK(std::abs(evening[1]) < 1e-12);
  // Halfway through a non-leap year.
  const auto mid = time_embed(data::to_timestamp({2021, 7, 2, 12, 0, 0}));
  CHECK(mid[3] == doctest::Approx(-1.0).epsilon(1e-6));
}

TEST_CASE("inverse-distance weighting") {
  const std::vector<double> equal{1.0, 1.0, 1.0};
  CHECK(*idw_mean(equal, std::vector<double>{1, 2, 3}) == doctest::Approx(2.0));
  CHECK(*idw_mean(std::vector<double>{1, 2, 2}, std::vector<double>{4, 1, 1}) == doctest::Approx(2.5));
  CHECK(*idw_mean(std::vector<double>{1, 2, 2}, std::vector<double>{4, kNaN, 1}) == doctest::Approx(3.0));
  CHECK_FALSE(idw_mean(equal, std::vector<double>{kNaN, kNaN, kNaN}).has_value());
  // A co-located neighbour dominates but does not divide by zero.
  CHECK(*idw_mean(std::vector<double>{0.0, 10.0}, std::vector<double>{5, 0}) > 4.99);
  CHECK_THROWS_AS(idw_mean(equal, std::vector<double>{1, 2}), DimensionError);
}

TEST_CASE("virtual met approximation stays inside the neighbour range") {
  std::vector<std::array<double, data::kNumMet>> vals(3);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t c = 0; c < data::kNumMet; ++c) vals[i][c] = static_cast<double>(i * 7 + c % 5) - 3.0;
  vals[1][4] = kNaN;
  for (std::size_t c = 0; c < data::kNumMet; ++c) vals[0][c] = c == 9 ? kNaN : vals[0][c];
  const std::vector<double> dist{3.0, 11.0, 25.0};
  const auto out = approx_virtual_met(dist, vals);
  for (std::size_t c = 0; c < data::kNumMet; ++c) {
    double lo = 1e300, hi = -1e300;
    for (const auto& v : vals)
      if (!std::isnan(v[c])) lo = std::min(lo, v[c]), hi = std::max(hi, v[c]);
    CHECK(out[c] >= lo - 1e-12);
    CHECK(out[c] <= hi + 1e-12);
  }
  vals[0][0] = vals[1][0] = vals[2][0] = kNaN;
  CHECK(std::isnan(approx_virtual_met(dist, vals)[0]));
}

TEST_CASE("window enumeration") {
  const WindowSpec spec{36, 6, 1};
  CHECK(make_windows(0, 42, spec).size() == 1);
  CHECK(make_windows(0, 48, spec).size() == 7);
  std::string warning;
  CHECK(make_windows(0, 41, spec, {}, {}, &warning).empty());
  CHECK_FALSE(warning.empty());

  // A missing input step at 10 drops windows 0..10; a missing target at 45
  // drops the windows whose horizon covers it.
  std::vector<std::uint8_t> in(60, 1), out(60, 1);
  in[10] = 0;
  out[45] = 0;
  const auto w = make_windows(0, 60, spec, in, out);
  for (std::size_t s : w) {
    CHECK(s > 10);
    CHECK((s + 36 > 45 || s + 42 <= 45));
  }
  CHECK(w == std::vector<std::size_t>{11, 12, 13, 14, 15, 16, 17, 18});
  CHECK(make_windows(0, 48, WindowSpec{36, 6, 3}).size() == 3);
  CHECK_THROWS_AS(make_windows(0, 48, WindowSpec{0, 6, 1}), ConfigError);
}

TEST_CASE("target encoding round trip") {
  NormStats s;
  s.mean.fill(0.0);
  s.std.fill(1.0);
  s.mean[data::kFf] = 5.0;
  s.std[data::kFf] = 2.0;
  s.mean[data::kGff] = 8.0;
  s.std[data::kGff] = 3.0;
  for (int dd = 0; dd < 360; ++dd) {
    const auto e = encode_targets(dd, 7.0, 11.0, s);
    const auto back = decode_targets(e, s);
    CHECK(std::abs(back.dd - dd) < 1e-9);
    CHECK(back.ff == doctest::Approx(7.0).epsilon(1e-14));
    CHECK(back.gff == doctest::Approx(11.0).epsilon(1e-14));
    CHECK_FALSE(back.direction_undefined);
  }
  const std::vector<double> calm{0.0, 0.0, 0.0, 0.0};
  CHECK(decode_targets(calm, s).direction_undefined);
  CHECK_THROWS_AS(decode_targets(std::vector<double>{1, 2, 3}, s), DimensionError);

  s.dir_mean = {0.5, -0.5};
  s.dir_std = {2.0, 4.0};
  const auto lag = encode_lags(90.0, 7.0, 11.0, s);
  CHECK(lag[0] == doctest::Approx(0.25));
  CHECK(lag[1] == doctest::Approx(0.125));
  CHECK(lag[2] == doctest::Approx(1.0));
}

TEST_CASE("normalisation statistics use only the training stations and steps") {
  data::Dataset d = two_station_dataset(10);
  for (std::size_t t = 0; t < 10; ++t) {
    d.set(0, t, data::kFf, t < 6 ? static_cast<double>(t) : 1000.0);
    d.set(1, t, data::kFf, 1e6);  // leakage canary
    d.set(0, t, data::kGff, 4.0);
    d.set(0, t, data::kDd, t % 2 == 0 ? 0.0 : 90.0);
  }
  const std::vector<std::size_t> train{0};
  const NormStats s = NormStats::compute(d, train, 6);
  CHECK(s.mean[data::kFf] == doctest::Approx(2.5));
  CHECK(s.std[data::kFf] == doctest::Approx(std::sqrt(17.5 / 6.0)));
  CHECK(s.mean[data::kGff] == 4.0);
  CHECK(s.std[data::kGff] == 1.0);  // zero variance
  CHECK(s.mean[data::kDd] == 0.0);
  CHECK(s.std[data::kDd] == 1.0);
  CHECK(s.dir_mean[0] == doctest::Approx(0.5));
  CHECK(s.dir_std[0] == doctest::Approx(0.5));
  bool warned = false;
  for (const auto& w : s.warnings) warned |= w.find("gff") != std::string::npos;
  CHECK(warned);

  // The same stats whatever the other station or later steps contain.
  data::Dataset d2 = d;
  for (std::size_t t = 0; t < 10; ++t) d2.set(1, t, data::kFf, -3.0);
  d2.set(0, 8, data::kFf, -50.0);
  CHECK(NormStats::compute(d2, train, 6) == s);
}

TEST_CASE("forward fill bridges short gaps only") {
  data::Dataset d = two_station_dataset(12);
  const double series[12] = {1, kNaN, kNaN, kNaN, 2, kNaN, kNaN, kNaN, kNaN, 3, kNaN, kNaN};
  for (std::size_t t = 0; t < 12; ++t) d.set(0, t, data::kFf, series[t]);
  const std::size_t filled = forward_fill(d, 3);
  CHECK(filled == 3 + 3 + 2);
  CHECK(d.value(0, 3, data::kFf) == 1.0);
  CHECK(d.value(0, 7, data::kFf) == 2.0);
  CHECK(std::isnan(d.value(0, 8, data::kFf)));
  CHECK(d.value(0, 11, data::kFf) == 3.0);
  CHECK(std::isnan(d.value(1, 0, data::kFf)));
}

TEST_CASE("frames give virtual nodes zero lag channels") {
  const geo::GridSpec g{52.0, 52.4, 5.0, 5.6, 1, 2};
  data::Dataset d(std::vector<geo::StationSite>{{"A", {52.1, 5.1}}}, data::to_timestamp({2021, 1, 1, 0, 0, 0}), 8);
  for (std::size_t t = 0; t < 8; ++t)
    for (std::size_t v = 0; v < data::kNumVariables; ++v) d.set(0, t, v, 10.0 + static_cast<double>(t + v));
  const auto ns = geo::build_node_set(d.stations(), g, {});
  REQUIRE(ns.virtual_nodes().size() == 1);
  const std::vector<std::size_t> train{0};
  const NormStats s = NormStats::compute(d, train, 8);
  const FeatureFrames f = build_frames(d, ns, s);
  const std::size_t vnode = ns.virtual_nodes()[0], rnode = ns.real()[0];
  for (std::size_t t = 0; t < 8; ++t) {
    for (std::size_t c = 0; c < FeatureLayout::kLag; ++c) CHECK(f.features(t, vnode)[FeatureLayout::kLagOffset + c] == 0.0);
    CHECK(f.features(t, rnode)[FeatureLayout::kLagOffset + 2] == doctest::Approx(s.normalize(data::kFf, 11.0 + t)));
    // A single neighbour: the virtual met channels copy the real node's.
    for (std::size_t c = 0; c < FeatureLayout::kMet; ++c)
      CHECK(f.features(t, vnode)[c] == doctest::Approx(f.features(t, rnode)[c]));
    CHECK(std::isnan(f.targets(t, vnode)[0]));
    CHECK(f.input_ok[t] == 1);
  }
  CHECK(FeatureLayout::kConstWidth == 38);
  CHECK(FeatureLayout::channel_names().size() == 38);

  const NodeMeta meta = NodeMeta::from(ns);
  const WindowSample w = materialize(f, meta, d, 1, WindowSpec{3, 2, 1}, 2);
  CHECK(w.x.rows() == 3 * 2);
  CHECK(w.y.rows() == 1);
  CHECK(w.y.cols() == 8);
  REQUIRE(w.future_x.has_value());
  CHECK((*w.future_x)(0, 0) == f.features(3, 0)[0]);
  CHECK_THROWS_AS(materialize(f, meta, d, 5, WindowSpec{3, 2, 1}), ContractError);
}
