#include "advdet/detection.hpp"

#include <algorithm>
#include <cmath>

#include "advdet/error.hpp"
#include "advdet/random.hpp"

namespace advdet {

namespace {

bool interleaved(const DetectionDataset& d) {
  if (d.size() % 2 != 0) return false;
  for (std::size_t i = 0; i < d.size(); ++i)
    if (d.labels[i] != static_cast<int>(i % 2)) return false;
  return true;
}

LabeledDataset features_dataset(const TrainedModel& classifier, int ad_index, const Tensor& inputs,
                                std::vector<int> labels) {
  LabeledDataset out;
  out.images = features_at_batch(classifier, inputs, ad_index);
  out.labels = std::move(labels);
  out.class_count = 2;
  return out;
}

void require_frozen(const TrainedModel& classifier) {
  if (!classifier.frozen) throw ConfigError("classifier must be frozen");
}

}  // namespace

bool DetectionDataset::balanced() const {
  const auto ones = std::count(labels.begin(), labels.end(), 1);
  return 2 * static_cast<std::size_t>(ones) == labels.size();
}

void DetectionDataset::validate_pairs(const AttackConfig& attack) const {
  if (!interleaved(*this)) throw ConfigError("detection records are not original/adversarial pairs");
  const std::size_t d = inputs.row_size();
  for (std::size_t i = 0; i < size(); i += 2) {
    auto a = inputs.data().subspan(i * d, d);
    auto b = inputs.data().subspan((i + 1) * d, d);
    const double dist = is_l2(attack.family) ? distance_l2(a, b) : distance_linf(a, b);
    const double slack = is_l2(attack.family) ? 1e-6 : 0.0;
    if (dist > attack.epsilon + slack)
      throw ConfigError("pair " + std::to_string(i / 2) + " exceeds the attack budget");
  }
}

LabeledDataset DetectionDataset::as_labeled() const {
  LabeledDataset out;
  out.images = inputs;
  out.labels = labels;
  out.class_count = 2;
  return out;
}

DetectionDataset detection_dataset_from(std::span<const AdversarialExample> examples,
                                        const std::string& provenance) {
  if (examples.empty()) throw ConfigError("no adversarial examples");
  std::vector<Tensor> items;
  DetectionDataset out;
  items.reserve(2 * examples.size());
  for (const auto& e : examples) {
    items.push_back(e.original);
    items.push_back(e.perturbed);
    out.labels.push_back(0);
    out.labels.push_back(1);
    out.provenance.push_back("original");
    out.provenance.push_back(provenance);
    if (e.status == AttackStatus::kDegenerate) ++out.degenerate;
  }
  out.inputs = stack(items);
  return out;
}

DetectionDataset generate_static_dataset(const TrainedModel& model, const LabeledDataset& data,
                                         const AttackConfig& attack) {
  require_frozen(model);
  if (data.empty()) throw ConfigError("no originals to attack");
  if (attack.family == AttackFamily::kDynamic)
    throw ConfigError("static datasets need a classifier-only attack");
  const auto adv = attack_dataset(model, data, attack);
  return detection_dataset_from(adv, attack.id());
}

const char* training_mode_name(TrainingMode mode) {
  return mode == TrainingMode::kStatic ? "static" : "dynamic";
}

TrainingMode training_mode_from_name(const std::string& name) {
  if (name == "static") return TrainingMode::kStatic;
  if (name == "dynamic") return TrainingMode::kDynamic;
  throw ConfigError("unknown training mode '" + name + "'");
}

void DetectorBundle::validate() const {
  require_frozen(classifier);
  if (!classifier.spec.has_attach_point(ad_index))
    throw ConfigError("unknown attachment point AD(" + std::to_string(ad_index) + ")");
  const Shape fs = features_shape(classifier, ad_index);
  if (detector.spec.input_shape != fs)
    throw ShapeError("detector input " + shape_str(detector.spec.input_shape) +
                     " does not match AD(" + std::to_string(ad_index) + ") features " +
                     shape_str(fs));
  if (!detector.is_binary()) throw ConfigError("detector must end in a sigmoid unit");
}

DetectorBundle make_bundle(const TrainedModel& classifier, int ad_index,
                           const DetectorTopology& base, std::uint64_t seed) {
  DetectorBundle b;
  b.classifier = classifier;
  b.classifier.frozen = true;
  b.ad_index = ad_index;
  const auto topology = topology_for_attachment(b.classifier, ad_index, base);
  b.detector = build_detector(features_shape(b.classifier, ad_index), topology, seed);
  b.validate();
  return b;
}

DetectorTraining train_static_detector(const DetectorBundle& bundle,
                                       const DetectionDataset& dataset,
                                       const OptimizerConfig& opt, double holdout) {
  bundle.validate();
  if (dataset.size() == 0 || !dataset.balanced()) throw ConfigError("detection dataset is unbalanced");
  if (!(holdout >= 0.0 && holdout < 1.0)) throw ConfigError("holdout must lie in [0, 1)");

  LabeledDataset train, val;
  if (interleaved(dataset)) {
    const std::size_t pairs = dataset.size() / 2;
    std::vector<std::size_t> order(pairs);
    for (std::size_t i = 0; i < pairs; ++i) order[i] = i;
    Rng rng(mix_seed(opt.seed, 1));
    rng.shuffle(order);
    const auto held = static_cast<std::size_t>(std::llround(holdout * static_cast<double>(pairs)));
    std::vector<std::size_t> tr_idx, va_idx;
    for (std::size_t k = 0; k < pairs; ++k) {
      auto& dst = k < held ? va_idx : tr_idx;
      dst.push_back(2 * order[k]);
      dst.push_back(2 * order[k] + 1);
    }
    std::sort(tr_idx.begin(), tr_idx.end());
    std::sort(va_idx.begin(), va_idx.end());
    const auto all = dataset.as_labeled();
    train = all.subset(tr_idx);
    if (!va_idx.empty()) val = all.subset(va_idx);
  } else {
    std::tie(train, val) = split_holdout(dataset.as_labeled(), holdout, mix_seed(opt.seed, 1));
  }
  const auto ftrain = features_dataset(bundle.classifier, bundle.ad_index, train.images, train.labels);
  LabeledDataset fval;
  fval.class_count = 2;
  if (!val.empty()) fval = features_dataset(bundle.classifier, bundle.ad_index, val.images, val.labels);

  auto result = train_supervised(bundle.detector, ftrain, fval, opt);
  DetectorTraining out{bundle, std::move(result.history), result.best_epoch};
  out.bundle.detector = std::move(result.model);
  out.bundle.mode = TrainingMode::kStatic;
  return out;
}

Modifications draw_modifications(Rng& rng, std::size_t n, const DynamicTrainingOptions& options) {
  Modifications m{std::vector<int>(n, 0), std::vector<double>(n, 0.0)};
  for (std::size_t i = 0; i < n; ++i) {
    m.mask[i] = rng.bernoulli(options.modify_probability) ? 1 : 0;
    if (m.mask[i]) m.sigmas[i] = rng.uniform(options.sigma_min, options.sigma_max);
  }
  return m;
}

DetectorTraining train_dynamic_detector(const DetectorBundle& bundle, const LabeledDataset& data,
                                        const AttackConfig& attack, const OptimizerConfig& opt,
                                        const DynamicTrainingOptions& options) {
  bundle.validate();
  opt.validate();
  attack.validate();
  if (attack.family != AttackFamily::kDynamic) throw ConfigError("dynamic training needs a dynamic attack");
  if (data.empty()) throw ConfigError("training set is empty");
  if (!(options.modify_probability >= 0.0 && options.modify_probability <= 1.0))
    throw ConfigError("modify_probability must lie in [0, 1]");
  if (!(0.0 <= options.sigma_min && options.sigma_min <= options.sigma_max && options.sigma_max <= 1.0))
    throw ConfigError("sigma range must lie within [0, 1]");

  auto [train, val] = split_holdout(data, options.holdout, mix_seed(opt.seed, 1));
  DetectorTraining out{bundle, {}, 0};
  out.bundle.mode = TrainingMode::kDynamic;
  out.bundle.attack = attack;
  TrainedModel& det = out.bundle.detector;
  if (det.frozen) throw ConfigError("cannot train a frozen detector");
  const TrainedModel& cls = bundle.classifier;
  Optimizer optimizer(opt, det.params);

  // Builds the modified batch: examples with mask set are replaced by dynamic
  // adversarial examples against `current`.
  auto perturb = [&](const Tensor& batch, std::span<const int> ys, const std::vector<int>& mask,
                     const std::vector<double>& sigmas, const TrainedModel& current) {
    Tensor mixed = batch;
    std::vector<std::size_t> picked;
    std::vector<double> picked_sigmas;
    for (std::size_t i = 0; i < mask.size(); ++i)
      if (mask[i]) {
        picked.push_back(i);
        picked_sigmas.push_back(sigmas[i]);
      }
    if (picked.empty()) return mixed;
    std::vector<Tensor> rows;
    std::vector<int> labels;
    for (auto i : picked) {
      rows.push_back(unstack_one(batch, i));
      labels.push_back(ys[i]);
    }
    const DetectorRef ref{&current, bundle.ad_index};
    const auto adv = dynamic_attack_batch(cls, ref, stack(rows), labels, attack, picked_sigmas);
    const std::size_t d = batch.row_size();
    for (std::size_t k = 0; k < picked.size(); ++k)
      std::copy(adv[k].perturbed.data().begin(), adv[k].perturbed.data().end(),
                mixed.data().begin() + picked[k] * d);
    return mixed;
  };
  Modifications val_mod;
  {
    Rng rng(mix_seed(opt.seed, 2));
    val_mod = draw_modifications(rng, val.size(), options);
  }
  const auto& val_mask = val_mod.mask;
  const auto& val_sigmas = val_mod.sigmas;
  auto validate_now = [&]() -> double {
    if (val.empty()) return 0.0;
    std::size_t correct = 0;
    for (std::size_t begin = 0; begin < val.size(); begin += kAttackChunk) {
      const std::size_t count = std::min(kAttackChunk, val.size() - begin);
      const std::vector<int> mask(val_mask.begin() + begin, val_mask.begin() + begin + count);
      const std::vector<double> sig(val_sigmas.begin() + begin, val_sigmas.begin() + begin + count);
      const std::span<const int> ys(val.labels.data() + begin, count);
      const Tensor mixed = perturb(val.batch(begin, count), ys, mask, sig, det);
      const Tensor p = predict_raw(det, features_at_batch(cls, mixed, bundle.ad_index));
      for (std::size_t i = 0; i < count; ++i) correct += (is_flagged(p[i]) ? 1 : 0) == mask[i];
    }
    return static_cast<double>(correct) / static_cast<double>(val.size());
  };

  TrainedModel best = det;
  double best_acc = -1.0;
  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t epoch = 0; epoch < opt.epochs; ++epoch) {
    Rng rng(mix_seed(opt.seed, 100 + epoch));
    rng.shuffle(order);
    const double lr = opt.lr_at(epoch);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += opt.batch_size) {
      const std::size_t count = std::min(opt.batch_size, order.size() - begin);
      const std::span<const std::size_t> idx(order.data() + begin, count);
      const Tensor batch = train.gather(idx);
      const auto ys = train.gather_labels(idx);
      const auto mod = draw_modifications(rng, count, options);
      const Tensor mixed = perturb(batch, ys, mod.mask, mod.sigmas, det);
      const Tensor feats = features_at_batch(cls, mixed, bundle.ad_index);
      loss_sum += train_step(det, optimizer, feats, mod.mask, lr);
      ++batches;
    }
    const double acc = validate_now();
    out.history.push_back({epoch + 1, loss_sum / static_cast<double>(std::max<std::size_t>(1, batches)), acc});
    if (acc > best_acc || val.empty()) {
      best_acc = acc;
      best = det;
      out.best_epoch = epoch + 1;
    }
  }
  out.bundle.detector = std::move(best);
  return out;
}

std::vector<double> detect_batch(const DetectorBundle& bundle, const Tensor& batch) {
  const Tensor p = predict_raw(bundle.detector, features_at_batch(bundle.classifier, batch, bundle.ad_index));
  return p.values();
}

double detect(const DetectorBundle& bundle, const Tensor& x) {
  Shape s{1};
  s.insert(s.end(), x.shape().begin(), x.shape().end());
  return detect_batch(bundle, x.reshaped(std::move(s))).front();
}

}  // namespace advdet
