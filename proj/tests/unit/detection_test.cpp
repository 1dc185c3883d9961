#include <doctest.h>

#include <cmath>

#include "advdet/detection.hpp"
#include "advdet/error.hpp"

using namespace advdet;

namespace {

TrainedModel small_cnn(std::uint64_t seed) {
  auto m = build_classifier(desk_classifier_spec({1, 8, 8}, 4, 4), seed);
  m.frozen = true;
  return m;
}

LabeledDataset random_set(std::size_t n, double hi, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Tensor> items;
  std::vector<int> labels;
  for (std::size_t i = 0; i < n; ++i) {
    Tensor x({1, 8, 8});
    for (auto& v : x.data()) v = std::round(rng.uniform(0.0, hi));
    items.push_back(std::move(x));
    labels.push_back(static_cast<int>(i % 4));
  }
  return make_dataset(items, std::move(labels), 4);
}

// Pairs every image with a copy shifted up by `offset` pixel units.
DetectionDataset offset_pairs(const LabeledDataset& data, double offset) {
  DetectionDataset d;
  std::vector<Tensor> rows;
  for (std::size_t i = 0; i < data.size(); ++i) {
    Tensor x = data.item(i);
    rows.push_back(x);
    for (auto& v : x.data()) v += offset;
    rows.push_back(std::move(x));
    d.labels.insert(d.labels.end(), {0, 1});
    d.provenance.insert(d.provenance.end(), {"original", "offset"});
  }
  d.inputs = stack(rows);
  return d;
}

}  // namespace

TEST_CASE("static dataset interleaves originals with their adversarial partners") {
  const auto m = small_cnn(1);
  const auto data = random_set(10, 255.0, 2);
  const auto cfg = AttackConfig::defaults(AttackFamily::kIterativeLinf, 2.0);
  const auto d = generate_static_dataset(m, data, cfg);
  REQUIRE(d.size() == 20);
  CHECK(d.balanced());
  for (std::size_t i = 0; i < d.size(); ++i) {
    CHECK(d.labels[i] == static_cast<int>(i % 2));
    CHECK(d.provenance[i] == (i % 2 ? cfg.id() : std::string("original")));
  }
  CHECK(d.inputs.rows(0, 1) == data.images.rows(0, 1));
  CHECK_NOTHROW(d.validate_pairs(cfg));
  CHECK(d.as_labeled().labels == d.labels);

  SUBCASE("validation catches broken pairs") {
    auto bad = d;
    bad.inputs[bad.inputs.row_size()] += 5.0;  // first adversarial record leaves the eps box
    CHECK_THROWS_AS(bad.validate_pairs(cfg), ConfigError);
    bad = d;
    std::swap(bad.labels[0], bad.labels[1]);
    CHECK_THROWS_AS(bad.validate_pairs(cfg), ConfigError);
  }
}

TEST_CASE("a detector separates an obvious offset and leaves the classifier alone") {
  const auto m = small_cnn(3);
  const auto data = random_set(300, 150.0, 4);
  const auto d = offset_pairs(data, 50.0);
  const auto bundle = make_bundle(m, 0, DetectorTopology{}, 5);
  OptimizerConfig opt = OptimizerConfig::detector_defaults();
  opt.lr_schedule = {{0, 1e-3}};
  opt.epochs = 30;
  opt.seed = 6;
  const auto r = train_static_detector(bundle, d, opt);
  CHECK(r.bundle.classifier == m);
  CHECK(r.bundle.mode == TrainingMode::kStatic);

  const auto test = offset_pairs(random_set(100, 150.0, 7), 50.0);
  const auto p = detect_batch(r.bundle, test.inputs);
  std::size_t correct = 0;
  double gap = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    correct += (is_flagged(p[i]) ? 1 : 0) == test.labels[i];
    gap += (test.labels[i] ? p[i] : -p[i]) / 100.0;
  }
  CHECK(static_cast<double>(correct) / p.size() >= 0.99);
  CHECK(gap > 0.5);
  CHECK(detect(r.bundle, test.inputs.rows(3, 1).reshaped({1, 8, 8})) == p[3]);
  CHECK(detect_batch(r.bundle, test.inputs) == p);
}

TEST_CASE("modification draws") {
  Rng rng(11);
  const auto m = draw_modifications(rng, 20000, {});
  double modified = 0.0, sigma = 0.0;
  for (std::size_t i = 0; i < m.mask.size(); ++i) {
    modified += m.mask[i];
    if (m.mask[i]) {
      CHECK((m.sigmas[i] >= 0.0 && m.sigmas[i] <= 1.0));
      sigma += m.sigmas[i];
    } else {
      CHECK(m.sigmas[i] == 0.0);
    }
  }
  // Both statistics sit well within 5 standard errors.
  CHECK(std::abs(modified / 20000.0 - 0.5) < 0.02);
  CHECK(std::abs(sigma / modified - 0.5) < 0.015);
  DynamicTrainingOptions none;
  none.modify_probability = 0.0;
  for (int v : draw_modifications(rng, 100, none).mask) CHECK(v == 0);
}

TEST_CASE("dynamic training") {
  const auto m = small_cnn(12);
  const auto data = random_set(40, 255.0, 13);
  const auto bundle = make_bundle(m, 2, DetectorTopology{}, 14);
  OptimizerConfig opt = OptimizerConfig::detector_defaults();
  opt.epochs = 2;
  opt.batch_size = 8;
  opt.seed = 15;
  const auto cfg = AttackConfig::defaults(AttackFamily::kDynamic, 1.0);
  const auto a = train_dynamic_detector(bundle, data, cfg, opt);
  CHECK(a.bundle.mode == TrainingMode::kDynamic);
  CHECK(a.bundle.classifier == m);
  CHECK(a.history.size() == 2);
  CHECK(a.bundle.detector.params == train_dynamic_detector(bundle, data, cfg, opt).bundle.detector.params);
  CHECK_THROWS_AS(train_dynamic_detector(bundle, data, AttackConfig::defaults(AttackFamily::kFast), opt),
                  ConfigError);
  DynamicTrainingOptions bad;
  bad.sigma_max = 2.0;
  CHECK_THROWS_AS(train_dynamic_detector(bundle, data, cfg, opt, bad), ConfigError);
}

TEST_CASE("bundle validation") {
  const auto m = small_cnn(16);
  auto b = make_bundle(m, 3, DetectorTopology{}, 17);
  CHECK_NOTHROW(b.validate());
  CHECK(b.detector.spec.input_shape == features_shape(m, 3));
  SUBCASE("classifier must be frozen") {
    b.classifier.frozen = false;
    CHECK_THROWS_AS(b.validate(), ConfigError);
  }
  SUBCASE("detector input must match the attachment point") {
    b.ad_index = 1;
    CHECK_THROWS_AS(b.validate(), ShapeError);
  }
  SUBCASE("unknown attachment point") { CHECK_THROWS_AS(make_bundle(m, 9, DetectorTopology{}, 1), ConfigError); }
  CHECK(training_mode_from_name(training_mode_name(TrainingMode::kDynamic)) == TrainingMode::kDynamic);
  CHECK_THROWS_AS(training_mode_from_name("online"), ConfigError);
}
