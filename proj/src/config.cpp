#include "advdet/config.hpp"

#include <filesystem>

#include "advdet/error.hpp"
#include "advdet/random.hpp"
#include "advdet/report.hpp"

namespace advdet {

namespace {

const char* const kSeedPurposes[] = {"classifier_init", "classifier_train", "detector",
                                     "holdout",         "evaluation",       "dynamic"};

void require_file(const std::string& path, const char* what) {
  if (path.empty()) return;
  if (!std::filesystem::is_regular_file(path))
    throw ConfigError(std::string(what) + " '" + path + "' does not exist");
}

template <class T>
void read(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

nlohmann::json families_json(const std::vector<AttackFamily>& fs) {
  nlohmann::json a = nlohmann::json::array();
  for (auto f : fs) a.push_back(attack_family_name(f));
  return a;
}

LabeledDataset concat(const std::vector<LabeledDataset>& parts) {
  if (parts.size() == 1) return parts.front();
  std::vector<Tensor> items;
  std::vector<int> labels;
  for (const auto& p : parts)
    for (std::size_t i = 0; i < p.size(); ++i) {
      items.push_back(p.item(i));
      labels.push_back(p.labels[i]);
    }
  return make_dataset(items, std::move(labels), parts.front().class_count, parts.front().split);
}

}  // namespace

nlohmann::json to_json(const SynthOptions& o) {
  return {{"classes", o.classes},       {"per_class", o.per_class},
          {"dims", o.dims},             {"separation", o.separation},
          {"noise", o.noise},           {"variation", o.variation},
          {"base_level", o.base_level},
          {"bumps", o.bumps},           {"bump_width", o.bump_width},
          {"modes", o.modes},           {"seed", o.seed},
          {"prototype_seed", o.prototype_seed}};
}

SynthOptions synth_options_from_json(const nlohmann::json& j, SynthOptions o) {
  read(j, "classes", o.classes);
  read(j, "per_class", o.per_class);
  read(j, "dims", o.dims);
  read(j, "separation", o.separation);
  read(j, "noise", o.noise);
  read(j, "variation", o.variation);
  read(j, "base_level", o.base_level);
  read(j, "bumps", o.bumps);
  read(j, "bump_width", o.bump_width);
  read(j, "modes", o.modes);
  read(j, "seed", o.seed);
  read(j, "prototype_seed", o.prototype_seed);
  return o;
}

void RunConfig::validate() const {
  if (dataset.source != "synth" && dataset.source != "idx" && dataset.source != "cifar")
    throw ConfigError("unknown dataset source '" + dataset.source + "'");
  if (dataset.source == "idx") {
    if (dataset.train_images.empty() || dataset.test_images.empty())
      throw ConfigError("idx source needs train_images and test_images");
  }
  if (dataset.source == "cifar" && (dataset.cifar_train.empty() || dataset.cifar_test.empty()))
    throw ConfigError("cifar source needs cifar_train and cifar_test");
  require_file(dataset.train_images, "train_images");
  require_file(dataset.train_labels, "train_labels");
  require_file(dataset.test_images, "test_images");
  require_file(dataset.test_labels, "test_labels");
  for (const auto& p : dataset.cifar_train) require_file(p, "cifar_train");
  require_file(dataset.cifar_test, "cifar_test");
  require_file(classifier_path, "classifier_path");
  require_file(bundle_path, "bundle_path");
  if (!(dataset.val_fraction >= 0.0 && dataset.val_fraction < 1.0))
    throw ConfigError("val_fraction must lie in [0, 1)");
  if (model.name != "desk") throw ConfigError("unknown model '" + model.name + "'");
  classifier_opt.validate();
  detector_opt.validate();
  for (const auto& a : attacks) a.validate();
  dynamic_attack.validate();
  if (dynamic_attack.family != AttackFamily::kDynamic)
    throw ConfigError("dynamic_attack must use the dynamic family");
  for (double s : sigma_grid)
    if (!(s >= 0.0 && s <= 1.0)) throw ConfigError("sigma grid values must lie in [0, 1]");
  if (!(fooling_threshold > 0.0 && fooling_threshold <= 1.0))
    throw ConfigError("fooling_threshold must lie in (0, 1]");
  if (!(l2_alpha > 0.0)) throw ConfigError("l2_alpha must be positive");
}

std::uint64_t RunConfig::derived_seed(const std::string& purpose) const {
  for (std::size_t i = 0; i < std::size(kSeedPurposes); ++i)
    if (purpose == kSeedPurposes[i]) return mix_seed(seed, i + 1);
  throw ConfigError("unknown seed purpose '" + purpose + "'");
}

nlohmann::json RunConfig::seeds() const {
  nlohmann::json j{{"master", seed},
                   {"synth_samples", dataset.synth.seed},
                   {"synth_prototypes", dataset.synth.prototype_seed}};
  for (const char* p : kSeedPurposes) j[p] = derived_seed(p);
  return j;
}

nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json attacks = nlohmann::json::array();
  for (const auto& a : c.attacks) attacks.push_back(to_json(a));
  return {
      {"dataset",
       {{"source", c.dataset.source},
        {"synth", to_json(c.dataset.synth)},
        {"synth_test_per_class", c.dataset.synth_test_per_class},
        {"train_images", c.dataset.train_images},
        {"train_labels", c.dataset.train_labels},
        {"test_images", c.dataset.test_images},
        {"test_labels", c.dataset.test_labels},
        {"cifar_train", c.dataset.cifar_train},
        {"cifar_test", c.dataset.cifar_test},
        {"max_train", c.dataset.max_train},
        {"max_test", c.dataset.max_test},
        {"val_fraction", c.dataset.val_fraction}}},
      {"model",
       {{"name", c.model.name},
        {"base_channels", c.model.base_channels},
        {"batch_norm", c.model.batch_norm},
        {"input_center", c.model.input_center},
        {"input_spread", c.model.input_spread}}},
      {"classifier_optimizer", to_json(c.classifier_opt)},
      {"detector_optimizer", to_json(c.detector_opt)},
      {"detector",
       {{"conv_layers", c.detector.conv_layers},
        {"channels", c.detector.channels},
        {"pool", c.detector.pool},
        {"batch_norm", c.detector.batch_norm}}},
      {"ad_index", c.ad_index},
      {"ad_indices", c.ad_indices},
      {"attacks", attacks},
      {"adversaries", families_json(c.adversaries)},
      {"transfer_family", attack_family_name(c.transfer_family)},
      {"linf_grid", c.linf_grid},
      {"l2_grid", c.l2_grid},
      {"l2_alpha", c.l2_alpha},
      {"sigma_grid", c.sigma_grid},
      {"dynamic_attack", to_json(c.dynamic_attack)},
      {"fooling_threshold", c.fooling_threshold},
      {"seed", c.seed},
      {"classifier_path", c.classifier_path},
      {"bundle_path", c.bundle_path},
      {"output_dir", c.output_dir},
  };
}

RunConfig run_config_from_json(const nlohmann::json& in) {
  const nlohmann::json& j = in.contains("config") ? in.at("config") : in;
  RunConfig c;
  try {
    if (j.contains("dataset")) {
      const auto& d = j.at("dataset");
      auto& o = c.dataset;
      read(d, "source", o.source);
      if (d.contains("synth")) o.synth = synth_options_from_json(d.at("synth"), o.synth);
      read(d, "synth_test_per_class", o.synth_test_per_class);
      read(d, "train_images", o.train_images);
      read(d, "train_labels", o.train_labels);
      read(d, "test_images", o.test_images);
      read(d, "test_labels", o.test_labels);
      read(d, "cifar_train", o.cifar_train);
      read(d, "cifar_test", o.cifar_test);
      read(d, "max_train", o.max_train);
      read(d, "max_test", o.max_test);
      read(d, "val_fraction", o.val_fraction);
    }
    if (j.contains("model")) {
      const auto& m = j.at("model");
      read(m, "name", c.model.name);
      read(m, "base_channels", c.model.base_channels);
      read(m, "batch_norm", c.model.batch_norm);
      read(m, "input_center", c.model.input_center);
      read(m, "input_spread", c.model.input_spread);
    }
    if (j.contains("classifier_optimizer"))
      c.classifier_opt = optimizer_config_from_json(j.at("classifier_optimizer"), c.classifier_opt);
    if (j.contains("detector_optimizer"))
      c.detector_opt = optimizer_config_from_json(j.at("detector_optimizer"), c.detector_opt);
    if (j.contains("detector")) {
      const auto& d = j.at("detector");
      read(d, "conv_layers", c.detector.conv_layers);
      read(d, "channels", c.detector.channels);
      read(d, "pool", c.detector.pool);
      read(d, "batch_norm", c.detector.batch_norm);
    }
    read(j, "ad_index", c.ad_index);
    read(j, "ad_indices", c.ad_indices);
    if (j.contains("attacks")) {
      c.attacks.clear();
      for (const auto& a : j.at("attacks")) c.attacks.push_back(attack_config_from_json(a));
    }
    if (j.contains("adversaries")) {
      c.adversaries.clear();
      for (const auto& a : j.at("adversaries"))
        c.adversaries.push_back(attack_family_from_name(a.get<std::string>()));
    }
    if (j.contains("transfer_family"))
      c.transfer_family = attack_family_from_name(j.at("transfer_family").get<std::string>());
    read(j, "linf_grid", c.linf_grid);
    read(j, "l2_grid", c.l2_grid);
    read(j, "l2_alpha", c.l2_alpha);
    read(j, "sigma_grid", c.sigma_grid);
    if (j.contains("dynamic_attack")) c.dynamic_attack = attack_config_from_json(j.at("dynamic_attack"));
    read(j, "fooling_threshold", c.fooling_threshold);
    read(j, "seed", c.seed);
    read(j, "classifier_path", c.classifier_path);
    read(j, "bundle_path", c.bundle_path);
    read(j, "output_dir", c.output_dir);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed run config: ") + e.what());
  }
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  try {
    return run_config_from_json(nlohmann::json::parse(read_text(path)));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

DataSplits load_data(const RunConfig& cfg) {
  const auto& d = cfg.dataset;
  LabeledDataset train, test;
  if (d.source == "synth") {
    SynthOptions o = d.synth;
    train = synth_blobs(o);
    o.per_class = d.synth_test_per_class;
    o.seed = mix_seed(d.synth.seed, 0x7465737400ULL);
    o.split = Split::kTest;
    test = synth_blobs(o);
  } else if (d.source == "idx") {
    train = d.train_labels.empty() ? load_idx(d.train_images)
                                   : load_idx(d.train_images, d.train_labels);
    test = d.test_labels.empty() ? load_idx(d.test_images) : load_idx(d.test_images, d.test_labels);
  } else if (d.source == "cifar") {
    std::vector<LabeledDataset> parts;
    for (const auto& p : d.cifar_train) parts.push_back(load_cifar_binary(p));
    train = concat(parts);
    test = load_cifar_binary(d.cifar_test);
  } else {
    throw ConfigError("unknown dataset source '" + d.source + "'");
  }
  test.split = Split::kTest;
  if (d.max_train && train.size() > d.max_train) train = train.head(d.max_train);
  if (d.max_test && test.size() > d.max_test) test = test.head(d.max_test);
  auto [rest, val] = split_holdout(train, d.val_fraction, cfg.derived_seed("holdout"));
  return {std::move(rest), std::move(val), std::move(test)};
}

NetworkSpec classifier_spec_for(const RunConfig& cfg, const Shape& input_shape,
                                std::size_t classes) {
  return desk_classifier_spec(input_shape, classes, cfg.model.base_channels, cfg.model.batch_norm,
                              cfg.model.input_center, cfg.model.input_spread);
}

DetectorSetup detector_setup_for(const RunConfig& cfg) {
  DetectorSetup s;
  s.ad_index = cfg.ad_index;
  s.topology = cfg.detector;
  s.opt = cfg.detector_opt;
  s.seed = cfg.derived_seed("detector");
  return s;
}

const std::vector<double>& grid_for(const RunConfig& cfg, AttackFamily family) {
  return is_l2(family) ? cfg.l2_grid : cfg.linf_grid;
}

AttackConfig adversary_base(const RunConfig& cfg, AttackFamily family, double epsilon) {
  auto a = AttackConfig::defaults(family, epsilon);
  if (family == AttackFamily::kIterativeL2) a.alpha = cfg.l2_alpha;
  return a;
}

FoolingAttacks fooling_attacks(const TrainedModel& model, const LabeledDataset& test,
                               const RunConfig& cfg) {
  FoolingAttacks out;
  for (auto f : cfg.adversaries) {
    if (f == AttackFamily::kDynamic) throw ConfigError("the dynamic adversary has no fooling search");
    out.names.push_back(attack_family_name(f));
    if (is_deepfool(f)) {
      out.attacks.push_back(AttackConfig::defaults(f, kUnbounded));
      out.choices.push_back({});
      continue;
    }
    auto choice = select_epsilon(model, test, adversary_base(cfg, f), grid_for(cfg, f),
                                 cfg.fooling_threshold);
    if (choice.epsilon) out.attacks.push_back(adversary_base(cfg, f, *choice.epsilon));
    else out.attacks.push_back(std::nullopt);
    out.choices.push_back(std::move(choice));
  }
  return out;
}

}  // namespace advdet
