#pragma once

#include <filesystem>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "contravirt/baselines.hpp"
#include "contravirt/encoder.hpp"
#include "contravirt/metrics.hpp"
#include "contravirt/run_config.hpp"
#include "contravirt/trainer.hpp"

// End-to-end orchestration shared by the CLI and the acceptance harness.

namespace contravirt::pipeline {

/// Loaded data, graph, features and window lists for one configuration.
struct Prepared {
  config::RunConfig cfg;
  data::Dataset full;      ///< every station, raw; only evaluation reads withheld rows
  data::Dataset observed;  ///< withheld stations blanked
  data::Dataset filled;    ///< observed, forward-filled (baseline inputs)
  data::Split split;
  std::vector<std::size_t> train_rows;  ///< dataset rows of training stations
  std::uint64_t data_hash = 0;
  std::vector<std::string> notes;

  geo::NodeSet nodes;
  Matrix adjacency;
  diffusion::SparseDiffusionMatrix diffusion;  ///< PPR, reweighted, top-k
  diffusion::SparseDiffusionMatrix plain;      ///< row-normalised kNN graph with self-loops

  features::NormStats stats;
  features::FeatureFrames frames;
  features::NodeMeta meta;
  features::WindowSpec spec;
  std::size_t period_split = 0;  ///< first validation step
  std::vector<std::size_t> train_starts;
  std::vector<std::size_t> val_starts;
  std::vector<std::size_t> eval_starts;
  std::vector<trainer::EvalTarget> targets;  ///< one per withheld station
  std::vector<std::size_t> pairing;          ///< virtual ordinal -> nearest real ordinal

  /// View for the trainer. Valid while this object lives and is not moved.
  trainer::TrainingData training_data(bool use_diffusion) const;
};

/// Keeps freed tape buffers in the process heap instead of returning them to
/// the OS. Training allocates and drops the same large matrices every step, and
/// without this most of the time goes to page faults. No-op outside glibc.
void retain_heap();

std::unique_ptr<Prepared> prepare(const config::RunConfig& cfg);

/// Report name of a learned configuration.
std::string method_name(objectives::Strategy s, bool use_moco, bool use_diffusion);
/// Lower-case file-name form of a method name.
std::string method_slug(const std::string& method);

struct TrainOutcome {
  model::Checkpoint checkpoint;
  trainer::TrainResult result;
  std::string method;
};

TrainOutcome train(const Prepared& p, std::ostream* progress = nullptr);
/// Predictions at the withheld stations over the full period. Throws
/// DataError when the checkpoint was trained on a different node layout.
std::vector<metrics::Sample> evaluate_checkpoint(const Prepared& p, model::Checkpoint& c);

enum class BaselineKind { AR, LR, KNN, IDW };
BaselineKind parse_baseline(const std::string& s);
std::string to_string(BaselineKind k);  ///< "AR", "LR", "KNN", "IDW"

/// Fitted AR/LR models (for the stored-artifact checks).
baselines::LinearBaseline fit_baseline(const Prepared& p, baselines::LinearKind kind);
std::string linear_baseline_json(const baselines::LinearBaseline& m);
std::vector<metrics::Sample> evaluate_baseline(const Prepared& p, BaselineKind kind,
                                               const baselines::LinearBaseline* fitted = nullptr);

std::string norm_stats_json(const features::NormStats& s);

/// Writes eval_<slug>.json, eval_<slug>.csv and predictions_<slug>.csv.
metrics::EvalReport write_evaluation(const std::filesystem::path& dir, const std::string& method,
                                     const std::vector<metrics::Sample>& samples);

/// Method table in the standard comparison order (MAE/RMSE for dd, ff, gff), plus lead and
/// station matrices, built from every eval_*.json in `dir`.
struct ReportTables {
  std::string comparison_csv;
  std::string leads_csv;
  std::string stations_csv;
  std::string json;
  std::size_t methods = 0;
};
ReportTables build_report(const std::vector<metrics::EvalReport>& reports);
ReportTables report_directory(const std::filesystem::path& dir);

void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace contravirt::pipeline
