#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "advdet/attacks.hpp"
#include "advdet/models.hpp"
#include "advdet/random.hpp"

namespace advdet {

/// Binary detection records. Static datasets interleave each original
/// (label 0, even index) with its adversarial counterpart (label 1, odd index).
struct DetectionDataset {
  Tensor inputs;  // (2n, item shape...)
  std::vector<int> labels;
  std::vector<std::string> provenance;  // "original" or the attack id
  std::size_t degenerate = 0;           // attacks that returned the original unchanged

  std::size_t size() const { return labels.size(); }
  bool balanced() const;
  // Throws unless every odd record is a label-1 partner of the preceding
  // label-0 record, within `attack`'s budget.
  void validate_pairs(const AttackConfig& attack) const;
  LabeledDataset as_labeled() const;
};

DetectionDataset generate_static_dataset(const TrainedModel& model, const LabeledDataset& data,
                                         const AttackConfig& attack);
// Pairs prebuilt adversarial examples with their originals.
DetectionDataset detection_dataset_from(std::span<const AdversarialExample> examples,
                                        const std::string& provenance);

enum class TrainingMode { kStatic, kDynamic };
const char* training_mode_name(TrainingMode mode);
TrainingMode training_mode_from_name(const std::string& name);

struct DetectorBundle {
  TrainedModel classifier;  // frozen
  int ad_index = 0;
  TrainedModel detector;
  TrainingMode mode = TrainingMode::kStatic;
  AttackConfig attack;

  // Throws when the classifier is not frozen, AD(ad_index) is unknown, or the
  // detector input does not match features_at at that point.
  void validate() const;
  DetectorRef ref() const { return {&detector, ad_index}; }
};

// Untrained bundle: a fresh detector sized for AD(ad_index) of `classifier`.
DetectorBundle make_bundle(const TrainedModel& classifier, int ad_index,
                           const DetectorTopology& base, std::uint64_t seed);

struct DetectorTraining {
  DetectorBundle bundle;
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
};

// Fraction of training pairs held out for detector model selection.
inline constexpr double kDetectorHoldout = 0.1;

/// Trains on features_at(AD) of a balanced dataset. Whole pairs are held out
/// for validation and the best-validation snapshot is returned. The
/// classifier is never modified.
DetectorTraining train_static_detector(const DetectorBundle& bundle,
                                       const DetectionDataset& dataset,
                                       const OptimizerConfig& opt,
                                       double holdout = kDetectorHoldout);

struct DynamicTrainingOptions {
  double modify_probability = 0.5;
  double sigma_min = 0.0;
  double sigma_max = 1.0;
  double holdout = kDetectorHoldout;
};

// Which examples of a batch the adversary replaces (mask 1) and the sigma it
// uses for each; sigma is 0 where mask is 0.
struct Modifications {
  std::vector<int> mask;
  std::vector<double> sigmas;
};
Modifications draw_modifications(Rng& rng, std::size_t n, const DynamicTrainingOptions& options);

/// Per mini-batch, each example is replaced by a dynamic attack with
/// probability 0.5 using sigma ~ U[0, 1] and the detector as of the start of
/// the batch; labels mark the replaced examples. One optimizer step per batch.
DetectorTraining train_dynamic_detector(const DetectorBundle& bundle, const LabeledDataset& data,
                                        const AttackConfig& attack, const OptimizerConfig& opt,
                                        const DynamicTrainingOptions& options = {});

double detect(const DetectorBundle& bundle, const Tensor& x);
std::vector<double> detect_batch(const DetectorBundle& bundle, const Tensor& batch);
inline bool is_flagged(double p_adv) { return p_adv > 0.5; }

}  // namespace advdet
