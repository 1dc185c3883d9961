#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "advdet/attacks.hpp"
#include "advdet/detection.hpp"

namespace advdet {

struct EvalReport {
  std::string adversary;  // attack id
  double epsilon = 0.0;
  std::optional<double> sigma;
  double accuracy = 0.0;  // classifier accuracy on the adversarial test set
  std::optional<double> detectability;  // null when undefined
  std::size_t n_original = 0;
  std::size_t n_adversarial = 0;
  std::size_t n_degenerate = 0;
  std::uint64_t seed = 0;

  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

struct TransferMatrix {
  std::string row_label;  // what the rows vary, e.g. "eps_fit" or "fit_adversary"
  std::string col_label;
  std::vector<std::string> rows;
  std::vector<std::string> cols;
  // cells[r][c]; nullopt marks an unattainable fit condition.
  std::vector<std::vector<std::optional<double>>> cells;

  std::optional<double> at(const std::string& row, const std::string& col) const;
  friend bool operator==(const TransferMatrix&, const TransferMatrix&) = default;
};

// Accuracy at threshold 0.5 of detector scores on originals (label 0) and
// adversarial inputs (label 1).
double joint_accuracy(std::span<const double> p_original, std::span<const double> p_adversarial);

struct JointSet {
  Tensor inputs;  // 2n records in shuffled order
  std::vector<int> labels;
};
// The joint set of n originals and their n adversarial counterparts,
// shuffled with `seed`.
JointSet joint_test_set(std::span<const AdversarialExample> examples, std::uint64_t seed);

// Detector accuracy on the shuffled joint set built from prebuilt examples.
double detectability(const DetectorBundle& bundle, std::span<const AdversarialExample> examples,
                     std::uint64_t seed);

struct Detectability {
  double value = 0.0;
  double accuracy = 0.0;  // classifier accuracy under the attack
  std::size_t n = 0;
  std::size_t degenerate = 0;
};
// Attacks every test original (against the bundle's classifier, and its
// detector for dynamic attacks) and scores the joint 2n set.
Detectability detectability(const DetectorBundle& bundle, const LabeledDataset& test,
                            const AttackConfig& attack, std::uint64_t seed);

double accuracy_under_attack(const TrainedModel& model, const LabeledDataset& test,
                             const AttackConfig& attack);
double accuracy_of(std::span<const AdversarialExample> examples);

inline constexpr double kFoolingThreshold = 0.30;

struct EpsilonChoice {
  std::optional<double> epsilon;  // minimal grid value with accuracy < threshold
  std::vector<double> grid;
  std::vector<double> accuracies;  // evaluated prefix of the grid
};
// Scans the grid in ascending order and stops at the first epsilon whose
// accuracy under attack falls below the threshold.
EpsilonChoice select_epsilon(const TrainedModel& model, const LabeledDataset& test,
                             const AttackConfig& base, std::span<const double> grid,
                             double threshold = kFoolingThreshold);

/// How detectors are built and trained inside the evaluation protocols.
struct DetectorSetup {
  int ad_index = 2;
  DetectorTopology topology;
  OptimizerConfig opt = OptimizerConfig::detector_defaults();
  std::uint64_t seed = 0;
};

// Generates a static dataset on `train`, fits a detector, returns the bundle.
DetectorBundle fit_static_detector(const TrainedModel& model, const LabeledDataset& train,
                                   const AttackConfig& attack, const DetectorSetup& setup);

EvalReport evaluate_bundle(const DetectorBundle& bundle, const LabeledDataset& test,
                           const AttackConfig& attack, std::uint64_t seed);

/// One detector per eps_fit (rows) tested against every eps_test (columns).
TransferMatrix epsilon_transfer_matrix(const TrainedModel& model, const AttackConfig& base,
                                       std::span<const double> grid, const LabeledDataset& train,
                                       const LabeledDataset& test, const DetectorSetup& setup);

/// One detector per adversary (rows) tested on every adversary (columns).
/// `attacks` carry their fooling-strength epsilon; nullopt marks an adversary
/// whose epsilon search failed, and yields an empty row and column.
TransferMatrix cross_adversary_matrix(const TrainedModel& model,
                                      std::span<const std::optional<AttackConfig>> attacks,
                                      std::span<const std::string> names,
                                      const LabeledDataset& train, const LabeledDataset& test,
                                      const DetectorSetup& setup);

struct DepthCell {
  std::string adversary;
  int ad_index = 0;
  std::optional<double> detectability;
  friend bool operator==(const DepthCell&, const DepthCell&) = default;
};
std::vector<DepthCell> depth_sweep(const TrainedModel& model,
                                   std::span<const std::optional<AttackConfig>> attacks,
                                   std::span<const std::string> names, std::span<const int> ad_indices,
                                   const LabeledDataset& train, const LabeledDataset& test,
                                   const DetectorSetup& setup);

/// Per sigma: classifier accuracy under the dynamic attack and the detector's
/// balanced accuracy on regular test data versus the successful adversarial
/// examples only. Detectability is null when no example succeeds.
std::vector<EvalReport> dynamic_eval(const DetectorBundle& bundle, const LabeledDataset& test,
                                     std::span<const double> sigmas, const AttackConfig& base,
                                     std::uint64_t seed);

std::vector<double> default_sigma_grid();

// Seed for matrix cell (row, col) derived from the master seed.
std::uint64_t cell_seed(std::uint64_t master, std::size_t row, std::size_t col);

}  // namespace advdet
