#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "wr/common.hpp"
#include "wr/encoder.hpp"
#include "wr/features.hpp"
#include "wr/rng.hpp"

namespace wr::trainer {

/// max(0, d_ap - d_an + margin).
double triplet_loss(double d_ap, double d_an, double margin);

struct Triplet {
  Index anchor;
  Index positive;
  Index negative;
  bool operator==(const Triplet&) const = default;
};

/// Admission rule applied to each anchor's candidate triplet.
enum class MiningRule {
  /// Hardest positive and hardest negative, kept iff d_an < d_ap - m.
  hard,
  /// Hardest positive and the closest negative beyond it, kept iff
  /// d_ap < d_an < d_ap + m.
  semi_hard,
  /// Hardest positive and hardest negative, kept iff the loss is positive
  /// (d_an < d_ap + m).
  batch_hard,
};

std::string to_string(MiningRule rule);
MiningRule mining_rule_from_string(const std::string& name);

/// One candidate per anchor, in ascending anchor order; distance ties resolve
/// to the lowest index. Anchors lacking a positive or a negative are skipped.
std::vector<Triplet> mine_hard_triplets(const Matrix& encodings, std::span<const Index> labels,
                                        double margin, MiningRule rule = MiningRule::hard);

/// Mean batch-hard loss over every anchor that has both a positive and a
/// negative (admitted or not). Used for progress reporting.
double batch_hard_loss(const Matrix& encodings, std::span<const Index> labels, double margin);

/// Inputs are raw descriptors (one per row), fed through the whole model.
struct TripletBatch {
  Matrix inputs;
  std::vector<Index> labels;
  std::vector<Triplet> triplets;
};

/// Gradient with the same layout as the model it was taken from.
struct BackwardResult {
  double loss = 0.0;
  encoder::EncoderModel gradient;
};

/// Mean triplet loss over `batch.triplets` and its exact gradient with respect
/// to every backbone and codebook parameter. Triplets in the clamp region
/// (loss <= 0) contribute nothing, and so does a zero distance. Throws
/// ValidationError on an empty triplet list and TrainingError naming the
/// parameter block when a gradient is not finite.
BackwardResult backward(const TripletBatch& batch, const encoder::EncoderModel& model, double margin);

/// Flattened encodings of every input row, computed the same way as the
/// training forward pass.
Matrix forward_batch(const encoder::EncoderModel& model, const Matrix& inputs);

struct ParameterBlock {
  std::string name;
  std::span<double> values;
};

/// Views over every trainable array, in a fixed order.
std::vector<ParameterBlock> parameter_blocks(encoder::EncoderModel& model);

/// Adam with bias correction; state keyed on parameter_blocks order.
class Adam {
 public:
  Adam(double beta1 = 0.9, double beta2 = 0.999, double epsilon = 1e-8)
      : beta1_(beta1), beta2_(beta2), epsilon_(epsilon) {}

  void step(encoder::EncoderModel& model, encoder::EncoderModel& gradient, double learning_rate);
  long steps() const { return step_; }

 private:
  double beta1_, beta2_, epsilon_;
  long step_ = 0;
  std::vector<std::vector<double>> first_, second_;
};

struct ModelConfig {
  std::vector<Index> hidden_dims{64, 64};
  encoder::Activation output_activation = encoder::Activation::identity;  // hidden layers use relu
  Index n_clusters = 16;
  encoder::EncodingMode mode = encoder::EncodingMode::netrvlad;
  double alpha_init = 100.0;
};

struct TrainConfig {
  double margin = 0.1;
  double learning_rate = 1e-3;
  Index batch_size = 128;
  Index per_class = 8;
  int epochs_max = 30;
  int warmup_epochs = 5;
  int patience = 5;
  double validation_fraction = 0.1;
  Index validation_pool = 1000;
  Index steps_per_epoch = 0;  // 0: ceil(train items / batch_size)
  Index max_steps = 0;        // 0: unlimited
  MiningRule mining = MiningRule::hard;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Learning rate of `epoch` (0-based): linear from lr/10 to lr across the
/// warmup epochs, then lr * (1 + cos(pi * (epoch - W) / (E - W))) / 2.
double learning_rate_at(const TrainConfig& config, int epoch);

struct EpochRecord {
  int epoch = 0;
  double learning_rate = 0.0;
  double loss = 0.0;
  double validation_map = 0.0;
  Index steps = 0;
  Index triplets = 0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  int stopping_epoch = 0;
  int best_epoch = 0;
  double best_validation_map = 0.0;
  Index train_items = 0;
  Index validation_items = 0;
  Index total_steps = 0;

  nlohmann::json to_json() const;
};

struct TrainResult {
  encoder::EncoderModel model;
  TrainReport report;
};

/// Picks `batch_size / per_class` distinct classes uniformly among those with
/// at least `per_class` members, then `per_class` distinct members of each.
class ClassBalancedSampler {
 public:
  ClassBalancedSampler(std::span<const Index> item_labels, Index batch_size, Index per_class,
                       std::uint64_t seed);

  /// Item positions (indices into the label span), grouped by class.
  std::vector<Index> next_batch();
  Index eligible_classes() const { return static_cast<Index>(eligible_.size()); }

 private:
  std::vector<std::vector<Index>> eligible_;
  Index classes_per_batch_;
  Index per_class_;
  Rng rng_;
};

/// Trains a fresh model on `descriptors` using the pseudo labels. The rows of
/// `descriptors` are indexed by `labels.items[i].descriptor`. Returns the
/// snapshot with the best validation mAP.
TrainResult train(const Matrix& descriptors, const features::PseudoLabeledSet& labels,
                  const ModelConfig& model_config, const TrainConfig& config);

/// Fresh, untrained model as train() would start from.
encoder::EncoderModel initial_model(const Matrix& sample_inputs, const ModelConfig& model_config,
                                    std::uint64_t seed);

}  // namespace wr::trainer
