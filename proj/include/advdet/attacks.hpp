#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "advdet/dataset.hpp"
#include "advdet/models.hpp"

namespace advdet {

enum class AttackFamily { kFast, kIterativeLinf, kIterativeL2, kDeepFoolL2, kDeepFoolLinf, kDynamic };

const char* attack_family_name(AttackFamily family);
AttackFamily attack_family_from_name(const std::string& name);
bool is_deepfool(AttackFamily family);
bool is_l2(AttackFamily family);

// How the dynamic adversary treats the detector term. kEvade pushes p_adv
// down (the adversary hides from the detector); kReinforce flips the sign.
enum class DetectorObjective { kEvade, kReinforce };

inline constexpr double kUnbounded = std::numeric_limits<double>::infinity();

struct AttackConfig {
  AttackFamily family = AttackFamily::kFast;
  // Distance budget in pixel units. For DeepFool it is an optional cap
  // (kUnbounded disables it).
  double epsilon = 1.0;
  double alpha = 1.0;
  std::size_t max_iter = 1;
  double sigma = 0.0;
  double pixel_min = kPixelMin;
  double pixel_max = kPixelMax;
  // DeepFool: step multiplier and the extra logit margin added to each
  // linearized step so the iterate crosses ties.
  double overshoot = 1.0;
  double boundary_push = 1e-6;
  DetectorObjective detector_objective = DetectorObjective::kEvade;

  // Family defaults: fast (single step), iterative_linf alpha 1 / 10 steps,
  // iterative_l2 alpha 20 / 10 steps, deepfool 50 steps uncapped, dynamic
  // alpha 0.25 / 10 steps.
  static AttackConfig defaults(AttackFamily family, double epsilon = 1.0);

  void validate() const;
  // Short identifier such as "iterative_linf:eps=2" or "dynamic:eps=1:sigma=0.3".
  std::string id() const;

  friend bool operator==(const AttackConfig&, const AttackConfig&) = default;
};

nlohmann::json to_json(const AttackConfig& cfg);
AttackConfig attack_config_from_json(const nlohmann::json& j);

enum class AttackStatus {
  kOk,
  kDegenerate,  // no usable gradient; the original is returned
  kExhausted,   // DeepFool ran out of iterations without a class change
};
const char* attack_status_name(AttackStatus status);

struct AdversarialExample {
  Tensor original;
  Tensor perturbed;
  int true_label = 0;
  int pred_before = 0;
  int pred_after = 0;
  std::size_t iterations = 0;
  double linf = 0.0;
  double l2 = 0.0;
  bool fooled = false;  // pred_after != true_label
  AttackStatus status = AttackStatus::kOk;
  std::optional<double> p_adv;  // final detector output (dynamic attacks)

  friend bool operator==(const AdversarialExample&, const AdversarialExample&) = default;
};

/// A trained detector reading the classifier's activation at AD(ad_index).
struct DetectorRef {
  const TrainedModel* detector = nullptr;
  int ad_index = 0;
};

Tensor project_l2_ball(const Tensor& p, const Tensor& center, double epsilon);
// Coordinatewise clip into the eps-box around `center` and the pixel box. The
// result satisfies |out - center| <= eps exactly in floating point.
Tensor clip_linf(const Tensor& p, const Tensor& center, double epsilon, double lo, double hi);
Tensor clip_box(const Tensor& p, double lo, double hi);

AdversarialExample fast_gradient_sign(const TrainedModel& model, const Tensor& x, int y_true,
                                      const AttackConfig& cfg);
AdversarialExample basic_iterative_linf(const TrainedModel& model, const Tensor& x, int y_true,
                                        const AttackConfig& cfg);
AdversarialExample basic_iterative_l2(const TrainedModel& model, const Tensor& x, int y_true,
                                      const AttackConfig& cfg);
AdversarialExample deepfool(const TrainedModel& model, const Tensor& x, int y_true,
                            const AttackConfig& cfg);
AdversarialExample dynamic_attack(const TrainedModel& model, const DetectorRef& detector,
                                  const Tensor& x, int y_true, const AttackConfig& cfg);

/// Attacks a batch (N, item shape...) at once. Examples are independent, so
/// each output equals the single-example result. `detector` is required for
/// the dynamic family.
std::vector<AdversarialExample> attack_batch(const TrainedModel& model, const Tensor& batch,
                                             std::span<const int> labels, const AttackConfig& cfg,
                                             const DetectorRef* detector = nullptr);

// The dynamic attack with an individual sigma for every example (cfg.sigma
// is ignored).
std::vector<AdversarialExample> dynamic_attack_batch(const TrainedModel& model,
                                                     const DetectorRef& detector,
                                                     const Tensor& batch,
                                                     std::span<const int> labels,
                                                     const AttackConfig& cfg,
                                                     std::span<const double> sigmas);

inline constexpr std::size_t kAttackChunk = 64;

// Attacks every example of `data` in order, kAttackChunk at a time.
std::vector<AdversarialExample> attack_dataset(const TrainedModel& model,
                                               const LabeledDataset& data, const AttackConfig& cfg,
                                               const DetectorRef* detector = nullptr);

// Stacks the perturbed tensors into a dataset labeled with the true classes.
LabeledDataset perturbed_dataset(std::span<const AdversarialExample> examples,
                                 std::size_t class_count, Split split = Split::kTest);

}  // namespace advdet
