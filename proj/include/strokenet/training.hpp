#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "strokenet/model.hpp"
#include "strokenet/preprocess.hpp"
#include "strokenet/tensor.hpp"
#include "strokenet/volume.hpp"

namespace strokenet {

struct TrainConfig {
  std::size_t batch_size = 8;
  std::size_t max_epochs = 300;
  std::size_t patience = 50;
  double momentum = 0.9;
  double lr_init = 3e-5;
  double gamma = 2.0;
  // Per-class focal weights. Empty means default_alpha() of the training labels.
  std::vector<double> alpha;
  std::uint64_t seed = 1;
  double validation_fraction = 0.1;
  bool augment = true;
  AugmentConfig augmentation;

  // Throws ConfigError naming every violated invariant. num_classes = 0 skips the
  // alpha length check.
  void validate(std::size_t num_classes = 0) const;

  std::map<std::string, std::string> to_key_values() const;
  std::vector<std::string> apply_key_values(const std::map<std::string, std::string>& kv);

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct FocalLossResult {
  double loss = 0.0;
  Tensor grad_logits;            // d(loss)/d(logits), (N, C)
  std::size_t floor_events = 0;  // times p_{i,y_i} was clamped to kProbabilityFloor
};

inline constexpr double kProbabilityFloor = 1e-12;

// Mean over the batch of -alpha_y (1 - p_y)^gamma log p_y, with p = softmax output.
FocalLossResult focal_loss(const Tensor& probs, std::span<const int> labels,
                           std::span<const double> alpha, double gamma);

// alpha_c = 1 - count_c / sum(counts).
std::vector<double> default_alpha(std::span<const std::size_t> class_counts);

// 0.5 * lr_init * (1 + cos(pi * t / max_epochs)) for 0 <= t <= max_epochs.
double cosine_lr(std::size_t epoch, const TrainConfig& config);

struct OptimizerState {
  ModelParams velocity;
  std::size_t epoch = 0;
  double lr = 0.0;
};

OptimizerState make_optimizer_state(const ModelParams& params);

// v <- momentum * v + g; w <- w - lr * v. Throws NumericalError naming the epoch and
// parameter when a gradient is not finite; params are untouched in that case.
void sgd_step(ModelParams& params, const ModelParams& grads, OptimizerState& state, double lr,
              double momentum);

class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience) : patience_(patience) {}

  // Returns true when loss strictly improves on the best seen so far.
  bool update(std::size_t epoch, double loss);
  bool should_stop(std::size_t epoch) const { return epoch - best_epoch_ >= patience_; }
  std::size_t best_epoch() const noexcept { return best_epoch_; }
  double best_loss() const noexcept { return best_loss_; }

 private:
  std::size_t patience_;
  std::size_t best_epoch_ = 0;
  double best_loss_ = 0.0;
  bool seen_ = false;
};

struct HistoryRow {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double lr = 0.0;

  friend bool operator==(const HistoryRow&, const HistoryRow&) = default;
};

// "epoch,train_loss,val_loss,lr" table.
std::string format_history(const std::vector<HistoryRow>& history);
std::vector<HistoryRow> parse_history(const std::string& csv);

// One preprocessed patient. `volume` has already been resampled, clipped and cropped;
// it is empty (no voxels) for metadata-only models.
struct Sample {
  Volume volume;
  Tensor meta;  // (1, V)
  int label = 0;
  std::size_t index = 0;  // stable id for per-sample random streams
};

using Dataset = std::vector<Sample>;

// (N, C) class probabilities in inference mode, batched.
Tensor infer_probs(const Dataset& data, const ModelParams& params, const ModelConfig& config,
                   std::size_t batch_size = 8);

struct TrainResult {
  ModelParams best_params;
  std::vector<HistoryRow> history;
  std::size_t best_epoch = 0;
  std::vector<double> alpha;
  std::size_t floor_events = 0;
  std::size_t train_size = 0;
  std::size_t validation_size = 0;
};

using EpochCallback = std::function<void(const HistoryRow&)>;

// Carves a stratified validation set out of `data`, then runs the epoch loop with
// cosine lr, on-the-fly augmentation of training samples only and early stopping
// on validation loss. Returns the parameters of the best validation epoch.
TrainResult train(const ModelParams& initial, const Dataset& data, const TrainConfig& train_config,
                  const ModelConfig& model_config, const EpochCallback& on_epoch = {});

}  // namespace strokenet
