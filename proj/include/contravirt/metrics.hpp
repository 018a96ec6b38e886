#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "contravirt/datakit.hpp"

// Point-error metrics and grouped evaluation reports.

namespace contravirt::metrics {

/// Throws ContractError on empty or mismatched input.
double mae(std::span<const double> pred, std::span<const double> truth);
double rmse(std::span<const double> pred, std::span<const double> truth);
/// Shorter arc between two directions in degrees, in [0, 180].
double angular_error(double pred_deg, double truth_deg);

enum class Variable { Direction, Speed, Gust };
std::string to_string(Variable v);  ///< "dd", "ff", "gff"
Variable parse_variable(const std::string& s);

/// DJF, MAM, JJA or SON of a UTC timestamp.
std::string season_of(data::Timestamp t);

struct Sample {
  std::string method;
  Variable variable = Variable::Speed;
  std::size_t lead = 1;  ///< 1..t_out
  std::string station;
  data::Timestamp time = 0;  ///< valid time of the forecast
  double pred = 0.0;
  double truth = 0.0;

  /// |pred - truth|, or the angular error for directions.
  double error() const;
};

inline const std::string kAll = "*";

struct CellKey {
  std::string method;
  std::string variable;
  std::string lead;     ///< "1".."6" or "*"
  std::string station;  ///< id or "*"
  std::string season;   ///< DJF.. or "*"
  friend auto operator<=>(const CellKey&, const CellKey&) = default;
};

struct CellStats {
  double mae = 0.0;
  double rmse = 0.0;
  std::size_t n = 0;
};

struct GroupBy {
  bool lead = false;
  bool station = false;
  bool season = false;
};

struct EvalReport {
  std::map<CellKey, CellStats> cells;

  /// Pooled cell of one method and variable, or nullptr.
  const CellStats* find(const std::string& method, Variable v, const std::string& lead = kAll,
                        const std::string& station = kAll, const std::string& season = kAll) const;
  void merge(const EvalReport& other);

  /// method,variable,lead,station,season,mae,rmse,n
  std::string to_csv() const;
  std::string to_json() const;
  static EvalReport from_json(const std::string& text);
};

/// Groups samples by method, variable and the selected dimensions.
EvalReport aggregate(std::span<const Sample> samples, const GroupBy& by);
/// Pooled, per-lead, per-station, per-season and full-breakdown cells.
EvalReport full_report(std::span<const Sample> samples);

/// method,station,time,lead,variable,pred,truth
std::string samples_csv(std::span<const Sample> samples);

}  // namespace contravirt::metrics
