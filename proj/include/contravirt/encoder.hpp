#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "contravirt/autodiff.hpp"
#include "contravirt/diffusion.hpp"
#include "contravirt/features.hpp"

// GCN encoder, regression head, and the momentum key encoder.

namespace contravirt::model {

using ad::Parameter;
using ad::Tape;
using ad::Var;

struct ModelDims {
  std::size_t nodes = 0;
  std::size_t n_virtual = 0;
  std::size_t const_width = features::FeatureLayout::kConstWidth;
  std::size_t type_dim = 8;
  std::size_t embed_dim = 64;
  std::size_t t_in = 36;
  std::size_t t_out = 6;

  std::size_t input_width() const { return const_width + type_dim; }
  std::size_t head_width() const { return t_out * 4; }
  friend bool operator==(const ModelDims&, const ModelDims&) = default;
};

struct GcnLayer {
  Parameter w;  ///< in x out
  Parameter b;  ///< 1 x out
};

struct Encoder {
  GcnLayer shared;       ///< per-step layer over [constant features | type embedding]
  Parameter lag_table;   ///< n_virtual x 4, learnable lag channels of virtual nodes
  Parameter type_table;  ///< 2 x type_dim, rows {real, virtual}
  GcnLayer deep1;
  GcnLayer deep2;

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
};

struct RegressionHead {
  Parameter w;  ///< embed_dim x t_out*4
  Parameter b;  ///< 1 x t_out*4
};

struct Model {
  ModelDims dims;
  Encoder query;
  Encoder key;
  RegressionHead head;

  /// Xavier-uniform weights, zero biases and lag tables; deterministic in
  /// `seed`. The key encoder starts as a copy of the query encoder.
  static Model init(const ModelDims& dims, std::uint64_t seed);

  /// Parameters receiving gradients: query encoder then head.
  std::vector<Parameter*> trainable();
  std::vector<const Parameter*> all_parameters() const;
};

enum class Binding { Tracked, Frozen };

/// Binds a parameter to the tape, tracked or as a frozen snapshot.
Var bind(Tape& tape, Parameter& p, Binding b);

/// relu(S H W + b), applied to every block of N rows of `h`.
Var gcn_forward(const std::shared_ptr<const ad::SharedCsr>& s, Var h, Var w, Var b);

/// Input stack for `windows` windows: rows ordered [window][step][node].
struct EncoderInput {
  const Matrix* x = nullptr;     ///< rows x kConstWidth
  /// Optional, same shape as x, entries 0/1. Lag-channel entries must not
  /// vary across the steps of a window (the lag table is per node).
  const Matrix* mask = nullptr;
  std::size_t windows = 0;
};

/// Shared layer at every step, temporal mean, giving h: [window][node] x d.
Var encode(Tape& tape, Encoder& enc, Binding binding, const std::shared_ptr<const ad::SharedCsr>& s,
           const features::NodeMeta& meta, const ModelDims& dims, const EncoderInput& in);

/// Two GCN layers and the linear head: [window][node] x t_out*4.
Var predict(Tape& tape, Encoder& enc, RegressionHead& head, Binding binding,
            const std::shared_ptr<const ad::SharedCsr>& s, Var h);

/// key <- m key + (1 - m) query for every parameter.
void momentum_update(const Encoder& query, Encoder& key, double m);

struct Checkpoint {
  static constexpr int kVersion = 1;
  Model model;
  features::NormStats stats;
  diffusion::DiffusionParams diffusion;
  bool use_diffusion = true;  ///< false: plain kNN propagation
  std::string method;         ///< report name of the configuration
  features::FeatureLayout layout;
  std::uint64_t seed = 0;
  std::vector<std::string> station_order;  ///< station ids of the real nodes, in node order
};

std::string checkpoint_json(const Checkpoint& c);
Checkpoint checkpoint_from_json(const std::string& text);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace contravirt::model
