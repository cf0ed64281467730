#pragma once

// Mini-batch training: Adam with decoupled weight decay, reduce-on-plateau
// learning-rate schedule, early stopping on validation MAE and retention of
// the best checkpoint.

#include "hfdtm/dataio.hpp"
#include "hfdtm/model.hpp"
#include "hfdtm/objective.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace hfdtm {

enum class Ablation { None, NoHierarchy, NoCorridorWeight, NoConservation };

std::string to_string(Ablation a);
Ablation ablation_from_string(const std::string& name);

struct SchedulerConfig {
  double factor = 0.5;
  std::size_t patience = 5;
  double min_lr = 1e-5;
};

struct TrainConfig {
  double lr = 1e-3;
  double weight_decay = 5e-4;
  std::size_t batch_size = 64;
  std::size_t max_epochs = 100;
  std::size_t patience = 10;  // early stopping
  SchedulerConfig scheduler;
  LossWeights loss;
  std::size_t window = 16;
  std::uint64_t seed = 1;
  Ablation ablation = Ablation::None;
  std::size_t hidden = 64;
  std::size_t embed_dim = 64;
  std::size_t mlp_hidden = 64;

  void validate() const;
  std::string to_json() const;
  /// Missing keys keep their defaults; unknown keys are rejected.
  static TrainConfig from_json(const std::string& text);
  std::string digest() const;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adam over a fixed parameter list, reading each tensor's gradient.
///
/// Weight decay is decoupled: theta <- theta - lr * wd * theta is applied
/// before the bias-corrected moment update.
class Adam {
 public:
  explicit Adam(std::vector<grad::Tensor> params, AdamConfig config = {});

  void step(double lr, double weight_decay);
  std::size_t steps() const { return t_; }

 private:
  std::vector<grad::Tensor> params_;
  std::vector<Matrix> m_, v_;
  AdamConfig config_;
  std::size_t t_ = 0;
};

class ReduceOnPlateau {
 public:
  ReduceOnPlateau(double initial_lr, SchedulerConfig config);

  /// Feeds one epoch's validation metric; returns the learning rate for the next epoch.
  double step(double metric);
  double lr() const { return lr_; }

 private:
  SchedulerConfig config_;
  double lr_;
  double best_;
  std::size_t bad_epochs_ = 0;
};

class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience);

  /// Records an epoch's metric; true when it improved on the best so far.
  bool update(std::size_t epoch, double metric);
  bool should_stop() const { return since_best_ >= patience_; }
  std::size_t best_epoch() const { return best_epoch_; }
  double best() const { return best_; }

 private:
  std::size_t patience_;
  double best_;
  std::size_t best_epoch_ = 0;
  std::size_t since_best_ = 0;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_mae = 0.0;   // vehicles per interval
  double lr = 0.0;
  double seconds = 0.0;   // cumulative wall clock
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_val_mae = 0.0;
  double total_seconds = 0.0;
  bool early_stopped = false;
};

/// Timing fields are omitted when `include_timing` is false, so that two
/// identical runs serialize identically.
std::string history_to_json(const TrainHistory& history, bool include_timing = true);

struct TrainResult {
  Model model;  // restored to the best validation epoch
  TrainHistory history;
};

ModelDims dims_for(const CorridorTopology& topology, const TrainConfig& config);
LossTerms loss_terms_for(Ablation ablation);

/// Trains `kind` on data.train, selecting on data.val. A NoHierarchy
/// ablation in the config turns an HfdTm request into the flat variant.
TrainResult train(ModelKind kind, const PreparedData& data, const CorridorTopology& topology,
                  const TrainConfig& config);

/// Hierarchical model with one component removed; everything else as in train().
TrainResult run_ablation_arm(Ablation arm, const PreparedData& data, const CorridorTopology& topology,
                             const TrainConfig& config);

}  // namespace hfdtm
