#pragma once

#include <cstddef>
#include <deque>
#include <span>
#include <string>
#include <vector>

#include "contravirt/autodiff.hpp"

// Contrastive and supervised objectives, the MoCo queue, and the lambda
// schedule that blends them.

namespace contravirt::objectives {

using ad::Var;

/// a.b / (|a| |b|). Throws DomainError for a zero vector.
double cosine_sim(std::span<const double> a, std::span<const double> b);

/// FIFO of L2-normalised key embeddings (zero keys are stored as zeros).
class MoCoQueue {
 public:
  explicit MoCoQueue(std::size_t capacity = 512, std::size_t dim = 0);

  /// Appends every row of `keys` (normalised), evicting the oldest entries.
  void push(const Matrix& keys);
  std::size_t size() const { return entries_.size(); }
  std::size_t capacity() const { return capacity_; }
  std::size_t dim() const { return dim_; }
  bool empty() const { return entries_.empty(); }
  const std::vector<double>& entry(std::size_t i) const { return entries_[i]; }
  /// size x dim snapshot, oldest first.
  Matrix matrix() const;
  void clear() { entries_.clear(); }

 private:
  std::size_t capacity_;
  std::size_t dim_;
  std::deque<std::vector<double>> entries_;
};

enum class Strategy { None, Augmented, MultiStep };
std::string to_string(Strategy s);
Strategy parse_strategy(const std::string& s);

struct ContrastiveConfig {
  Strategy strategy = Strategy::Augmented;
  double tau = 0.07;
  double mask_ratio = 0.3;
  std::size_t offset = 3;
  bool use_moco = true;
  std::size_t queue_capacity = 512;
  double momentum = 0.999;
  /// Drop the positive from the softmax denominator (the equations as
  /// printed). Needs a non-empty queue.
  bool literal_denominator = false;

  void validate() const;
};

/// InfoNCE of each query row against its key row (positive) and every queue
/// entry (negatives), averaged over rows. Queries and keys are L2-normalised
/// inside, so the logits are cosine similarities over tau.
Var info_nce(Var queries, Var keys, const Matrix& queue, double tau, bool literal_denominator = false);

/// Augmented view: node i of the original input against node i of the masked
/// input.
Var augmented_loss(Var h_query, Var h_masked_key, const Matrix& queue, double tau, bool literal = false);

/// Multi-step: virtual node i at t against real node pairing[i] at t+offset.
Var multistep_loss(Var h_virtual, Var h_real_future, const std::vector<std::size_t>& pairing, const Matrix& queue,
                   double tau, bool literal = false);

/// Queue-free variant: query row i is scored against every key row of its
/// group (rows [g*group_size, (g+1)*group_size)); the positive of query i is
/// key row positives[i] (global index, inside the same group).
Var in_batch_loss(Var queries, Var keys, std::size_t query_group, std::size_t key_group,
                  const std::vector<std::size_t>& positives, double tau, bool literal = false);

/// Mean over rows of the squared L2 norm of (pred - target).
Var supervised_mse(Var pred, const Matrix& target);

struct LambdaSchedule {
  double warmup_epochs = 20.0;
  double kappa = 10.0;
  double theta = 2.0;
};

/// min(1, e / E_warmup) * sigmoid(kappa (MAE_{e-1} - theta)), and 0 at e = 0.
double lambda_value(std::size_t epoch, double previous_mae, const LambdaSchedule& s = {});

Var total_loss(Var sup, Var contrast, double lambda);
double total_loss(double sup, double contrast, double lambda);

/// Mean cosine distance (1 - cos) of positive pairs and of query/negative
/// pairs. Rows of `negatives` are the candidate negatives for every query;
/// `exclude[i]`, when given and non-negative, is a negatives row skipped for
/// query i. Pairs involving a zero vector are not counted.
struct PairDistances {
  double positive = 0.0;
  double negative = 0.0;
  std::size_t positive_pairs = 0;
  std::size_t negative_pairs = 0;
};
PairDistances pair_distances(const Matrix& queries, const Matrix& keys, const Matrix& negatives,
                             const std::vector<long>* exclude = nullptr);

}  // namespace contravirt::objectives
