#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "contravirt/errors.hpp"
#include "contravirt/metrics.hpp"

using namespace contravirt;
using namespace contravirt::metrics;

TEST_CASE("point metrics") {
  const std::vector<double> p{1, 2, 3}, t{2, 2, 5};
  CHECK(mae(p, t) == doctest::Approx(1.0));
  CHECK(rmse(p, t) == doctest::Approx(std::sqrt(5.0 / 3.0)));
  CHECK(mae(t, t) == 0.0);
  CHECK_THROWS_AS(mae(std::vector<double>{}, std::vector<double>{}), ContractError);
  CHECK_THROWS_AS(rmse(p, std::vector<double>{1}), DimensionError);
}

TEST_CASE("angular error") {
  CHECK(angular_error(350, 10) == doctest::Approx(20.0));
  CHECK(angular_error(10, 350) == doctest::Approx(20.0));
  CHECK(angular_error(180, 0) == 180.0);
  CHECK(angular_error(0, 0) == 0.0);
  CHECK(angular_error(90, 270) == 180.0);
  CHECK(angular_error(359.5, 0.5) == doctest::Approx(1.0));
}

TEST_CASE("RMSE is never below MAE") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-10.0, 10.0);
  for (int i = 0; i < 1000; ++i) {
    std::vector<double> p(1 + i % 17), t(p.size());
    for (std::size_t j = 0; j < p.size(); ++j) {
      p[j] = u(rng);
      t[j] = u(rng);
    }
    CHECK(rmse(p, t) >= mae(p, t) - 1e-12);
  }
}

TEST_CASE("seasons") {
  CHECK(season_of(data::to_timestamp({2021, 1, 15, 0, 0, 0})) == "DJF");
  CHECK(season_of(data::to_timestamp({2021, 12, 31, 23, 50, 0})) == "DJF");
  CHECK(season_of(data::to_timestamp({2021, 3, 1, 0, 0, 0})) == "MAM");
  CHECK(season_of(data::to_timestamp({2021, 8, 31, 0, 0, 0})) == "JJA");
  CHECK(season_of(data::to_timestamp({2021, 11, 1, 0, 0, 0})) == "SON");
}

TEST_CASE("grouped aggregation") {
  const data::Timestamp jan = data::to_timestamp({2021, 1, 2, 0, 0, 0});
  const data::Timestamp jul = data::to_timestamp({2021, 7, 2, 0, 0, 0});
  std::vector<Sample> s{
      {"M", Variable::Speed, 1, "A", jan, 3.0, 1.0},
      {"M", Variable::Speed, 2, "A", jul, 1.0, 1.0},
      {"M", Variable::Speed, 1, "B", jul, 5.0, 1.0},
      {"M", Variable::Direction, 1, "A", jan, 350.0, 10.0},
      {"N", Variable::Speed, 1, "A", jan, 0.0, 1.0},
  };
  const EvalReport pooled = aggregate(s, {});
  const CellStats* ff = pooled.find("M", Variable::Speed);
  REQUIRE(ff != nullptr);
  CHECK(ff->n == 3);
  CHECK(ff->mae == doctest::Approx(2.0));
  CHECK(ff->rmse == doctest::Approx(std::sqrt(20.0 / 3.0)));
  CHECK(pooled.find("M", Variable::Direction)->mae == doctest::Approx(20.0));
  CHECK(pooled.find("N", Variable::Speed)->mae == 1.0);
  CHECK(pooled.find("M", Variable::Gust) == nullptr);

  const EvalReport by_lead = aggregate(s, {.lead = true});
  CHECK(by_lead.find("M", Variable::Speed, "1")->mae == doctest::Approx(3.0));
  CHECK(by_lead.find("M", Variable::Speed, "2")->mae == 0.0);
  const EvalReport by_season = aggregate(s, {.season = true});
  CHECK(by_season.find("M", Variable::Speed, kAll, kAll, "JJA")->n == 2);

  const EvalReport full = full_report(s);
  CHECK(full.find("M", Variable::Speed)->n == 3);
  CHECK(full.find("M", Variable::Speed, "1", "A")->n == 1);
  CHECK(full.find("M", Variable::Speed, kAll, "B")->mae == 4.0);

  const EvalReport back = EvalReport::from_json(full.to_json());
  CHECK(back.to_csv() == full.to_csv());
  CHECK(full.to_csv().rfind("method,variable,lead,station,season,mae,rmse,n\n", 0) == 0);
  CHECK_THROWS_AS(EvalReport::from_json("[]"), DataError);

  s[0].lead = 0;
  CHECK_THROWS_AS(aggregate(s, {}), ContractError);
}

TEST_CASE("variable names") {
  for (auto v : {Variable::Direction, Variable::Speed, Variable::Gust}) CHECK(parse_variable(to_string(v)) == v);
  CHECK_THROWS_AS(parse_variable("ta"), ContractError);
}
