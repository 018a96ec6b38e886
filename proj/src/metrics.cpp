#include "contravirt/metrics.hpp"

#include <cmath>
#include <sstream>

#include <json.hpp>

#include "contravirt/errors.hpp"
#include "contravirt/format.hpp"

namespace contravirt::metrics {

namespace {
void check_pair(std::span<const double> pred, std::span<const double> truth) {
  if (pred.empty()) throw ContractError("metric of an empty sample");
  if (pred.size() != truth.size()) throw DimensionError("metric inputs differ in length");
}
}  // namespace

double mae(std::span<const double> pred, std::span<const double> truth) {
  check_pair(pred, truth);
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += std::abs(pred[i] - truth[i]);
  return s / static_cast<double>(pred.size());
}

double rmse(std::span<const double> pred, std::span<const double> truth) {
  check_pair(pred, truth);
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += (pred[i] - truth[i]) * (pred[i] - truth[i]);
  return std::sqrt(s / static_cast<double>(pred.size()));
}

double angular_error(double pred_deg, double truth_deg) {
  double d = std::fmod(std::abs(pred_deg - truth_deg), 360.0);
  return std::min(d, 360.0 - d);
}

std::string to_string(Variable v) {
  switch (v) {
    case Variable::Direction:
      return "dd";
    case Variable::Speed:
      return "ff";
    case Variable::Gust:
      return "gff";
  }
  return "ff";
}

Variable parse_variable(const std::string& s) {
  if (s == "dd") return Variable::Direction;
  if (s == "ff") return Variable::Speed;
  if (s == "gff") return Variable::Gust;
  throw ContractError("unknown variable '" + s + "'");
}

std::string season_of(data::Timestamp t) {
  switch (data::to_civil(t).month) {
    case 12:
    case 1:
    case 2:
      return "DJF";
    case 3:
    case 4:
    case 5:
      return "MAM";
    case 6:
    case 7:
    case 8:
      return "JJA";
    default:
      return "SON";
  }
}

double Sample::error() const {
  return variable == Variable::Direction ? angular_error(pred, truth) : std::abs(pred - truth);
}

const CellStats* EvalReport::find(const std::string& method, Variable v, const std::string& lead,
                                  const std::string& station, const std::string& season) const {
  auto it = cells.find(CellKey{method, to_string(v), lead, station, season});
  return it == cells.end() ? nullptr : &it->second;
}

void EvalReport::merge(const EvalReport& other) {
  for (const auto& [k, v] : other.cells) cells[k] = v;
}

std::string EvalReport::to_csv() const {
  std::string out = "method,variable,lead,station,season,mae,rmse,n\n";
  for (const auto& [k, v] : cells) {
    out += k.method + ',' + k.variable + ',' + k.lead + ',' + k.station + ',' + k.season + ',' + format_double(v.mae) +
           ',' + format_double(v.rmse) + ',' + std::to_string(v.n) + '\n';
  }
  return out;
}

std::string EvalReport::to_json() const {
  nlohmann::json cells_json = nlohmann::json::array();
  for (const auto& [k, v] : cells) {
    cells_json.push_back({{"method", k.method},
                          {"variable", k.variable},
                          {"lead", k.lead},
                          {"station", k.station},
                          {"season", k.season},
                          {"mae", v.mae},
                          {"rmse", v.rmse},
                          {"n", v.n}});
  }
  nlohmann::json j{{"format", "contravirt-eval-report"}, {"version", 1}, {"cells", cells_json}};
  return j.dump(1);
}

EvalReport EvalReport::from_json(const std::string& text) {
  EvalReport r;
  try {
    const auto j = nlohmann::json::parse(text);
    if (j.at("format").get<std::string>() != "contravirt-eval-report") throw DataError("not an evaluation report");
    for (const auto& c : j.at("cells")) {
      CellKey k{c.at("method").get<std::string>(), c.at("variable").get<std::string>(), c.at("lead").get<std::string>(),
                c.at("station").get<std::string>(), c.at("season").get<std::string>()};
      r.cells[k] = CellStats{c.at("mae").get<double>(), c.at("rmse").get<double>(), c.at("n").get<std::size_t>()};
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed evaluation report: ") + e.what());
  }
  return r;
}

EvalReport aggregate(std::span<const Sample> samples, const GroupBy& by) {
  struct Acc {
    double abs = 0.0;
    double sq = 0.0;
    std::size_t n = 0;
  };
  std::map<CellKey, Acc> acc;
  for (const auto& s : samples) {
    if (s.lead == 0) throw ContractError("sample lead must be >= 1");
    CellKey k{s.method, to_string(s.variable), by.lead ? std::to_string(s.lead) : kAll, by.station ? s.station : kAll,
              by.season ? season_of(s.time) : kAll};
    const double e = s.error();
    if (!std::isfinite(e)) throw NumericalError("non-finite error for method " + s.method);
    auto& a = acc[k];
    a.abs += e;
    a.sq += e * e;
    ++a.n;
  }
  EvalReport r;
  for (const auto& [k, a] : acc) {
    const double n = static_cast<double>(a.n);
    CellStats c{a.abs / n, std::sqrt(a.sq / n), a.n};
    // Guard the Jensen ordering against last-bit rounding.
    if (c.rmse < c.mae) c.rmse = c.mae;
    r.cells[k] = c;
  }
  return r;
}

EvalReport full_report(std::span<const Sample> samples) {
  EvalReport r;
  for (const GroupBy& g : {GroupBy{}, GroupBy{true, false, false}, GroupBy{false, true, false}, GroupBy{false, false, true},
                           GroupBy{true, true, false}, GroupBy{true, true, true}}) {
    r.merge(aggregate(samples, g));
  }
  return r;
}

std::string samples_csv(std::span<const Sample> samples) {
  std::ostringstream out;
  out << "method,station,time,lead,variable,pred,truth\n";
  for (const auto& s : samples) {
    out << s.method << ',' << s.station << ',' << data::format_timestamp(s.time) << ',' << s.lead << ','
        << to_string(s.variable) << ',' << format_double(s.pred) << ',' << format_double(s.truth) << '\n';
  }
  return out.str();
}

}  // namespace contravirt::metrics
