#include <doctest.h>

#include <set>

#include "advdet/error.hpp"
#include "advdet/evaluation.hpp"

using namespace advdet;

namespace {

TrainedModel linear4() {
  NetworkSpec s;
  s.input_shape = {4};
  s.layers = {dense(2)};
  s.attach_points = {{0, 0}, {1, 1}};
  auto m = build_classifier(s, 0);
  m.params.get("0.weight") = Tensor({2, 4}, {0.02, -0.01, 0.03, 0.0, -0.01, 0.02, 0.0, 0.03});
  m.params.get("0.bias") = Tensor({2}, 0.0);
  m.frozen = true;
  return m;
}

LabeledDataset labeled_by(const TrainedModel& m, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  Tensor x({n, 4});
  for (auto& v : x.data()) v = std::round(rng.uniform(0.0, 255.0));
  LabeledDataset d;
  d.images = x;
  d.labels = predict_labels(m, x);
  d.class_count = 2;
  return d;
}

// A bundle whose detector outputs exactly 0.5 everywhere.
DetectorBundle constant_bundle(const TrainedModel& m, int ad) {
  auto b = make_bundle(m, ad, DetectorTopology{}, 1);
  std::size_t last = 0;
  for (std::size_t i = 0; i < b.detector.spec.layers.size(); ++i)
    if (b.detector.spec.layers[i].kind == LayerKind::kDense) last = i;
  const std::string prefix = std::to_string(last) + ".";
  for (std::size_t i = 0; i < b.detector.params.size(); ++i)
    if (b.detector.params.key(i).rfind(prefix, 0) == 0) b.detector.params.value(i).fill(0.0);
  b.detector.frozen = true;
  return b;
}

}  // namespace

TEST_CASE("joint accuracy") {
  const std::vector<double> half(10, 0.5), zero(10, 0.0), one(10, 1.0);
  CHECK(joint_accuracy(half, half) == 0.5);
  CHECK(joint_accuracy(zero, zero) == 0.5);
  CHECK(joint_accuracy(one, one) == 0.5);
  CHECK(joint_accuracy(zero, one) == 1.0);
  CHECK(joint_accuracy(one, zero) == 0.0);
  const std::vector<double> mixed{0.2, 0.7, 0.4, 0.9};
  CHECK(joint_accuracy(mixed, mixed) == 0.5);
}

TEST_CASE("detectability of a constant detector is chance") {
  const auto m = linear4();
  const auto test = labeled_by(m, 50, 2);
  const auto b = constant_bundle(m, 1);
  const auto cfg = AttackConfig::defaults(AttackFamily::kIterativeLinf, 8.0);
  const auto d = detectability(b, test, cfg, 3);
  CHECK(d.value == 0.5);
  CHECK(d.n == 50);
  const auto r = evaluate_bundle(b, test, cfg, 3);
  CHECK(*r.detectability == 0.5);
  CHECK(r.n_original == 50);
  CHECK(r.n_adversarial == 50);
  CHECK(r.adversary == cfg.id());
  CHECK(r.accuracy == doctest::Approx(accuracy_under_attack(m, test, cfg)));
}

TEST_CASE("joint test set shuffles but keeps every record") {
  const auto m = linear4();
  const auto test = labeled_by(m, 30, 4);
  const auto ex = attack_dataset(m, test, AttackConfig::defaults(AttackFamily::kFast, 3.0));
  const auto a = joint_test_set(ex, 1);
  const auto b = joint_test_set(ex, 2);
  CHECK(a.labels.size() == 60);
  CHECK(std::count(a.labels.begin(), a.labels.end(), 1) == 30);
  CHECK(a.labels != b.labels);
  std::multiset<std::vector<double>> ra, rb;
  for (std::size_t i = 0; i < 60; ++i) {
    auto row = a.inputs.rows(i, 1).values();
    row.push_back(a.labels[i]);
    ra.insert(row);
    row = b.inputs.rows(i, 1).values();
    row.push_back(b.labels[i]);
    rb.insert(row);
  }
  CHECK(ra == rb);
  const auto bundle = make_bundle(m, 0, DetectorTopology{}, 5);
  CHECK(detectability(bundle, ex, 1) == detectability(bundle, ex, 2));
}

TEST_CASE("epsilon selection picks the smallest fooling budget") {
  const auto m = linear4();
  const auto test = labeled_by(m, 100, 6);
  const std::vector<double> grid{0.5, 1, 2, 4, 8, 16, 32, 64};
  auto base = AttackConfig::defaults(AttackFamily::kIterativeLinf, 1.0);
  base.alpha = 8.0;
  const auto c = select_epsilon(m, test, base, grid);
  REQUIRE(c.epsilon);
  const std::size_t k = c.accuracies.size();
  CHECK(*c.epsilon == grid[k - 1]);
  CHECK(c.accuracies.back() < kFoolingThreshold);
  for (std::size_t i = 0; i + 1 < k; ++i) CHECK(c.accuracies[i] >= kFoolingThreshold);
  auto at = base;
  at.epsilon = *c.epsilon;
  CHECK(c.accuracies.back() == accuracy_under_attack(m, test, at));

  const std::vector<double> tiny{0.0, 0.1};
  const auto none = select_epsilon(m, test, base, tiny);
  CHECK_FALSE(none.epsilon);
  CHECK(none.accuracies.size() == 2);
}

TEST_CASE("dynamic evaluation") {
  const auto m = build_classifier(desk_classifier_spec({1, 8, 8}, 4, 4), 7);
  auto frozen = m;
  frozen.frozen = true;
  Rng rng(8);
  Tensor x({20, 1, 8, 8});
  for (auto& v : x.data()) v = std::round(rng.uniform(0.0, 255.0));
  LabeledDataset test{x, predict_labels(frozen, x), 4, Split::kTest};
  const auto b = constant_bundle(frozen, 2);
  auto cfg = AttackConfig::defaults(AttackFamily::kDynamic, 40.0);
  cfg.alpha = 4.0;
  const auto reports = dynamic_eval(b, test, default_sigma_grid(), cfg, 9);
  REQUIRE(reports.size() == 11);
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const auto& r = reports[i];
    CHECK(*r.sigma == doctest::Approx(0.1 * static_cast<double>(i)));
    CHECK(r.n_original == 20);
    CHECK(r.n_adversarial <= 20);
    if (r.n_adversarial > 0)
      CHECK(*r.detectability == 0.5);
    else
      CHECK_FALSE(r.detectability);
  }
  // A constant detector has no gradient, so at sigma 1 nothing moves.
  CHECK(reports.back().n_adversarial == 0);
  CHECK(reports.back().accuracy == 1.0);
  CHECK(reports.front().n_adversarial > 0);
}

TEST_CASE("cell seeds") {
  CHECK(cell_seed(5, 1, 2) == mix_seed(mix_seed(5, 1001), 2002));
  std::set<std::uint64_t> seen;
  for (std::size_t r = 0; r < 8; ++r)
    for (std::size_t c = 0; c < 8; ++c) seen.insert(cell_seed(42, r, c));
  CHECK(seen.size() == 64);
}

TEST_CASE("transfer matrix lookup") {
  TransferMatrix t{"eps_fit", "eps_test", {"1", "2"}, {"1", "2"}, {{0.9, 0.8}, {std::nullopt, 0.7}}};
  CHECK(*t.at("1", "2") == 0.8);
  CHECK_FALSE(t.at("2", "1"));
  CHECK_THROWS_AS(t.at("3", "1"), ConfigError);
  CHECK(default_sigma_grid().size() == 11);
}
