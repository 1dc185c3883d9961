#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "advdet/dataset.hpp"
#include "advdet/network.hpp"

namespace advdet {

/// A network together with its parameters. Frozen models reject training.
struct TrainedModel {
  NetworkSpec spec;
  ParameterSet params;
  bool frozen = false;

  // True when the final layer is a sigmoid (binary detector head).
  bool is_binary() const;
  std::size_t output_size() const;

  friend bool operator==(const TrainedModel&, const TrainedModel&) = default;
};

enum class OptimizerKind { kSgdMomentum, kAdam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kAdam;
  // (epoch, lr) pairs; the rate of the last pair whose epoch is <= the
  // current (0-based) epoch applies.
  std::vector<std::pair<std::size_t, double>> lr_schedule{{0, 1e-4}};
  double momentum = 0.9;
  double beta1 = 0.99;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t epochs = 20;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;

  void validate() const;
  double lr_at(std::size_t epoch) const;

  // Static-detector defaults: Adam, lr 1e-4, beta1 0.99, beta2 0.999, 20 epochs.
  static OptimizerConfig detector_defaults();
  // Classifier defaults: SGD with momentum 0.9, lr 0.1 / 0.01 / 0.001.
  static OptimizerConfig classifier_defaults();
};

nlohmann::json to_json(const OptimizerConfig& cfg);
// Fields absent from `j` keep their values from `base`.
OptimizerConfig optimizer_config_from_json(const nlohmann::json& j, OptimizerConfig base = {});

/// Default desk-scale classifier: normalize conv16 [AD1] conv16 [AD2] pool
/// conv32 [AD3] pool conv64 [AD4] GAP dense(classes). Each conv is followed by
/// relu, and by batch norm when `batch_norm` is set. Pixels are mapped through
/// (x - input_center) / input_spread before the first conv.
NetworkSpec desk_classifier_spec(const Shape& input_shape, std::size_t classes,
                                 std::size_t base_channels = 16, bool batch_norm = false,
                                 double input_center = 127.5, double input_spread = 127.5);

struct DetectorTopology {
  std::size_t conv_layers = 2;
  std::size_t channels = 32;
  // 2x2 max-pool after the first conv. Deep (already downsampled)
  // attachment points skip it.
  bool pool = true;
  bool batch_norm = true;
  // Leading normalize layer, used when the detector reads raw pixels.
  bool normalize_input = false;
  double input_center = 0.0;
  double input_spread = 1.0;
};

// Detector whose final output is a single sigmoid unit p_adv in [0, 1].
NetworkSpec detector_spec(const Shape& input_shape, const DetectorTopology& topology);

TrainedModel build_classifier(const NetworkSpec& spec, std::uint64_t seed);
TrainedModel build_detector(const Shape& input_shape, const DetectorTopology& topology,
                            std::uint64_t seed);
// Topology for an attachment point: pooling is kept only while the features
// still have the classifier's input resolution, and AD(0) detectors reuse the
// classifier's input normalization.
DetectorTopology topology_for_attachment(const TrainedModel& classifier, int ad_index,
                                         DetectorTopology base = {});
Shape features_shape(const TrainedModel& classifier, int ad_index);

/// SGD-with-momentum or Adam (bias-corrected) state over a parameter set.
class Optimizer {
 public:
  Optimizer(const OptimizerConfig& cfg, const ParameterSet& params);
  // One update from the parameter gradients recorded on `tape`.
  void apply(ParameterSet& params, const Tape& tape, const Gradients& grads, double lr);

 private:
  OptimizerConfig cfg_;
  std::map<std::string, std::size_t> index_of_;
  std::vector<Tensor> first_, second_;
  std::size_t t_ = 0;
};

// Training-mode forward/backward on one batch followed by an optimizer update
// (batch-norm running statistics included). Returns the batch loss.
double train_step(TrainedModel& model, Optimizer& optimizer, const Tensor& batch,
                  std::span<const int> labels, double lr);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_accuracy = 0.0;
};

struct TrainResult {
  TrainedModel model;  // snapshot with the best validation accuracy
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;  // 0 when no epoch ran
};

/// Mini-batch training with per-epoch validation and best-snapshot model
/// selection. Sigmoid-headed models use binary cross-entropy; all others use
/// softmax cross-entropy on their output logits. Deterministic given the seed.
TrainResult train_supervised(const TrainedModel& model, const LabeledDataset& train,
                             const LabeledDataset& val, const OptimizerConfig& opt);

struct Prediction {
  int label = 0;
  std::vector<double> probabilities;
};

// Model output for a batch (N, input_shape...) in evaluation mode.
Tensor predict_raw(const TrainedModel& model, const Tensor& batch);
// Softmax of the logits (or [1 - p, p] for sigmoid heads); argmax with
// first-index tie-breaking.
Prediction classify(const TrainedModel& model, const Tensor& input);
std::vector<Prediction> classify_batch(const TrainedModel& model, const Tensor& batch);
std::vector<int> predict_labels(const TrainedModel& model, const Tensor& batch);
double accuracy(const TrainedModel& model, const LabeledDataset& data);

// Activation at attachment point AD(ad_index), from an evaluation-mode pass.
Tensor features_at(const TrainedModel& model, const Tensor& input, int ad_index);
Tensor features_at_batch(const TrainedModel& model, const Tensor& batch, int ad_index);

// Evaluation-mode batches are processed in chunks of this many examples.
inline constexpr std::size_t kInferenceChunk = 128;

}  // namespace advdet
