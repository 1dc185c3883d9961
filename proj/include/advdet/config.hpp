#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "advdet/attacks.hpp"
#include "advdet/dataset.hpp"
#include "advdet/evaluation.hpp"
#include "advdet/models.hpp"

namespace advdet {

struct DatasetConfig {
  std::string source = "synth";  // synth | idx | cifar
  SynthOptions synth;            // training split; the test split reuses the prototypes
  std::size_t synth_test_per_class = 30;
  std::string train_images, train_labels, test_images, test_labels;  // idx
  std::vector<std::string> cifar_train;
  std::string cifar_test;
  std::size_t max_train = 0;  // 0 keeps everything
  std::size_t max_test = 0;
  double val_fraction = 0.1;
};

struct ModelConfig {
  std::string name = "desk";
  std::size_t base_channels = 16;
  bool batch_norm = false;
  double input_center = 127.5;
  double input_spread = 127.5;
};

/// One JSON document describing a run. Every random choice derives from
/// `seed` (and the explicit synthetic-data seeds).
struct RunConfig {
  DatasetConfig dataset;
  ModelConfig model;
  OptimizerConfig classifier_opt = OptimizerConfig::classifier_defaults();
  OptimizerConfig detector_opt = OptimizerConfig::detector_defaults();
  DetectorTopology detector;
  int ad_index = 2;
  std::vector<int> ad_indices{0, 1, 2, 3, 4};
  // Attacks for gen-adv / train-detector / eval; the first one is the default.
  std::vector<AttackConfig> attacks{AttackConfig::defaults(AttackFamily::kIterativeLinf, 2.0)};
  // Adversaries compared by transfer and depth-sweep, at fooling strength.
  std::vector<AttackFamily> adversaries{AttackFamily::kFast, AttackFamily::kIterativeLinf,
                                        AttackFamily::kIterativeL2, AttackFamily::kDeepFoolL2};
  AttackFamily transfer_family = AttackFamily::kFast;
  std::vector<double> linf_grid{1, 2, 3, 4};
  std::vector<double> l2_grid{20, 40, 60, 80};
  double l2_alpha = 20.0;  // step length of the iterative l2 adversary
  std::vector<double> sigma_grid = default_sigma_grid();
  AttackConfig dynamic_attack = AttackConfig::defaults(AttackFamily::kDynamic, 1.0);
  double fooling_threshold = kFoolingThreshold;
  std::uint64_t seed = 0;
  std::string classifier_path;
  std::string bundle_path;
  std::string output_dir = "out";

  // Value checks plus existence of every referenced input file.
  void validate() const;
  std::uint64_t derived_seed(const std::string& purpose) const;
  nlohmann::json seeds() const;  // every derived seed, by purpose
};

nlohmann::json to_json(const RunConfig& cfg);
// Fields absent from `j` keep their defaults. A run manifest (with a
// "config" member) is accepted as well.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

nlohmann::json to_json(const SynthOptions& o);
SynthOptions synth_options_from_json(const nlohmann::json& j, SynthOptions base = {});

struct DataSplits {
  LabeledDataset train;
  LabeledDataset val;
  LabeledDataset test;
};
DataSplits load_data(const RunConfig& cfg);

NetworkSpec classifier_spec_for(const RunConfig& cfg, const Shape& input_shape,
                                std::size_t classes);
DetectorSetup detector_setup_for(const RunConfig& cfg);

// Epsilon grid matching the attack's norm.
const std::vector<double>& grid_for(const RunConfig& cfg, AttackFamily family);
// Family defaults with the configured l2 step length.
AttackConfig adversary_base(const RunConfig& cfg, AttackFamily family, double epsilon = 1.0);

struct FoolingAttacks {
  std::vector<std::string> names;
  std::vector<std::optional<AttackConfig>> attacks;
  std::vector<EpsilonChoice> choices;  // empty grid for DeepFool (no budget search)
};
// Applies the fooling-strength rule to every configured adversary. DeepFool runs
// unbounded and is kept as is.
FoolingAttacks fooling_attacks(const TrainedModel& model, const LabeledDataset& test,
                               const RunConfig& cfg);

}  // namespace advdet
