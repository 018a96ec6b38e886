#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "contravirt/datakit.hpp"
#include "contravirt/diffusion.hpp"
#include "contravirt/features.hpp"
#include "contravirt/objectives.hpp"
#include "contravirt/trainer.hpp"

// Run configuration document (JSON). Every section and key is optional;
// omitted values take the defaults below, unknown keys are rejected.

namespace contravirt::config {

struct DataSection {
  std::optional<std::filesystem::path> csv;                ///< station CSV in the documented schema
  std::optional<data::SyntheticConfig> synthetic;          ///< generate instead of reading
};

struct SplitSection {
  std::vector<std::string> withheld_ids;  ///< explicit partition, wins when non-empty
  std::optional<std::size_t> withheld_count;
  std::uint64_t seed = 7;
};

struct GraphSection {
  std::size_t k = 3;
};

struct WindowSection {
  std::size_t t_in = 36;
  std::size_t t_out = 6;
  std::size_t train_stride = 1;
  std::size_t eval_stride = 1;
  std::size_t max_fill_gap = 3;
  double validation_fraction = 0.1;  ///< tail of the period held out for early stopping
};

struct ModelSection {
  std::size_t embed_dim = 64;
  std::size_t type_dim = 8;
};

struct BaselineSection {
  std::size_t k = 3;
  double ridge_lambda = 1e-3;
  std::size_t fit_stride = 1;  ///< subsampling of training windows for AR/LR fits
};

struct RunConfig {
  DataSection data;
  SplitSection split;
  geo::GridSpec grid{50.7, 53.6, 3.3, 7.3, 9, 9};
  GraphSection graph;
  diffusion::DiffusionParams diffusion;
  bool use_diffusion = true;
  WindowSection windows;
  ModelSection model;
  objectives::ContrastiveConfig contrastive;
  objectives::LambdaSchedule lambda;
  trainer::TrainConfig train;
  BaselineSection baselines;
  std::filesystem::path output_dir = "runs/default";

  /// Throws ConfigError for any out-of-range value.
  void validate() const;
};

/// Parses and validates. Unknown keys and wrong types raise ConfigError.
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::filesystem::path& path);
/// Canonical JSON of every field, defaults included.
std::string to_json(const RunConfig& c);

/// Output directory after applying the CONTRAVIRT_OUTPUT_ROOT override to
/// relative paths.
std::filesystem::path resolve_output_dir(const RunConfig& c);

}  // namespace contravirt::config
