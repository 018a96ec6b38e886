#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "contravirt/encoder.hpp"
#include "contravirt/features.hpp"
#include "contravirt/metrics.hpp"
#include "contravirt/objectives.hpp"

// Optimisation loop: batching, AdamW, MoCo maintenance, lambda scheduling,
// early stopping and plateau learning-rate decay.

namespace contravirt::trainer {

struct TrainConfig {
  double lr = 1e-3;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 200;
  std::size_t early_stop_patience = 15;
  std::size_t plateau_patience = 5;
  double plateau_factor = 0.5;
  std::size_t divergence_epochs = 3;
  std::uint64_t seed = 7;

  void validate() const;
};

struct AdamState {
  std::vector<Matrix> m;
  std::vector<Matrix> v;
  std::size_t step = 0;
};

/// Decoupled weight decay, then the bias-corrected Adam update. Returns false
/// (leaving parameters and state untouched) when any gradient is non-finite.
bool adamw_step(std::span<ad::Parameter* const> params, AdamState& state, double lr, double weight_decay,
                double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

struct EpochDiagnostics {
  std::size_t epoch = 0;
  double train_sup_loss = 0.0;
  double train_contrast_loss = 0.0;  ///< NaN when no contrastive branch ran
  double lambda = 0.0;
  double mae_dd = 0.0;
  double mae_ff = 0.0;
  double mae_gff = 0.0;
  double mae_mean = 0.0;  ///< mean of the three, fed to the next epoch's lambda
  double lr = 0.0;
  double pos_dist = 0.0;  ///< NaN when undefined
  double neg_dist = 0.0;  ///< NaN when undefined
  double val_loss = 0.0;  ///< NaN without validation windows
  std::size_t skipped_steps = 0;
  std::size_t skipped_future = 0;  ///< windows without a t+offset view
};

std::string diagnostics_csv(std::span<const EpochDiagnostics> log);

/// Everything the loop reads; the frames must come from training data only.
struct TrainingData {
  const features::FeatureFrames* frames = nullptr;
  features::NodeMeta meta;
  std::shared_ptr<const ad::SharedCsr> s;
  features::NormStats stats;
  features::WindowSpec spec;
  std::vector<std::size_t> train_starts;
  std::vector<std::size_t> val_starts;
  /// For each virtual node (by virtual ordinal), the real ordinal of its
  /// nearest real node.
  std::vector<std::size_t> pairing;
};

/// Rows [window][step][node] of constant features for the listed starts.
Matrix assemble_inputs(const features::FeatureFrames& frames, std::span<const std::size_t> starts, std::size_t t_in);
/// Encoded targets of the real nodes: [window][real] x t_out*4.
Matrix assemble_targets(const features::FeatureFrames& frames, const features::NodeMeta& meta,
                        std::span<const std::size_t> starts, std::size_t t_in, std::size_t t_out);
/// Bernoulli feature mask, one draw per (window, node, maskable channel) shared
/// across steps; 0 marks a masked channel.
Matrix feature_mask(std::size_t windows, std::size_t t_in, std::size_t nodes, double ratio, std::uint64_t seed,
                    std::uint64_t counter);

/// Loss of one mini-batch as the training loop builds it, on `tape`.
struct StepLoss {
  ad::Var sup;
  ad::Var contrast;       ///< invalid when no contrastive branch ran
  ad::Var total;
  ad::Var pred_real;      ///< [window][real] x t_out*4
  Matrix targets;
  Matrix keys;            ///< key embeddings to enqueue (MoCo only)
  double pos_sum = 0.0, pos_pairs = 0.0;
  double neg_sum = 0.0, neg_pairs = 0.0;
  std::size_t skipped_future = 0;

  bool has_contrast() const { return contrast.valid(); }
};

/// Supervised loss plus lambda times the configured contrastive loss. `step`
/// seeds the augmented-view mask. The query encoder and head are tracked; the
/// key encoder is frozen.
StepLoss step_loss(ad::Tape& tape, model::Model& m, const TrainingData& data, std::span<const std::size_t> batch,
                   const objectives::ContrastiveConfig& contrast, const objectives::MoCoQueue& queue, double lambda,
                   std::uint64_t seed, std::uint64_t step);

struct TrainResult {
  std::vector<EpochDiagnostics> log;
  std::size_t best_epoch = 0;
  double best_monitored = 0.0;
  bool stopped_early = false;
};

/// Trains in place; on return the model holds the best monitored snapshot.
/// Throws NumericalError after `divergence_epochs` consecutive non-finite
/// epochs.
TrainResult train(model::Model& m, const TrainingData& data, const TrainConfig& cfg,
                  const objectives::ContrastiveConfig& contrast, const objectives::LambdaSchedule& schedule = {},
                  std::ostream* progress = nullptr);

/// Supervised loss averaged over windows, without gradients.
double validation_loss(model::Model& m, const TrainingData& data, std::span<const std::size_t> starts,
                       std::size_t batch_size);

/// A node whose predictions are compared with a station's observations.
struct EvalTarget {
  std::size_t node = 0;
  std::size_t station = 0;  ///< row in the truth dataset
  std::string station_id;
};

/// Decoded predictions at `targets` for every start, paired with the raw
/// observations in `truth`. Missing truth values are skipped.
std::vector<metrics::Sample> evaluate(model::Model& m, const TrainingData& data, std::span<const std::size_t> starts,
                                      std::span<const EvalTarget> targets, const data::Dataset& truth,
                                      const std::string& method, std::size_t batch_size = 64);

}  // namespace contravirt::trainer
