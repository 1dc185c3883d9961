#include <doctest.h>

#include <cmath>

#include "advdet/attacks.hpp"
#include "advdet/error.hpp"
#include "advdet/random.hpp"

using namespace advdet;

namespace {

// Linear classifier logits = W x + b over a flat input of size W[0].size().
TrainedModel linear(const std::vector<std::vector<double>>& w, const std::vector<double>& b) {
  const std::size_t k = w.size(), d = w[0].size();
  NetworkSpec s;
  s.input_shape = {d};
  s.layers = {dense(k)};
  s.attach_points = {{0, 0}, {1, 1}};
  auto m = build_classifier(s, 0);
  std::vector<double> flat;
  for (const auto& row : w) flat.insert(flat.end(), row.begin(), row.end());
  m.params.get("0.weight") = Tensor({k, d}, flat);
  m.params.get("0.bias") = Tensor({k}, b);
  m.frozen = true;
  return m;
}

std::vector<double> softmax(const std::vector<double>& z) {
  double mx = z[0];
  for (double v : z) mx = std::max(mx, v);
  std::vector<double> p;
  double s = 0.0;
  for (double v : z) s += std::exp(v - mx);
  for (double v : z) p.push_back(std::exp(v - mx) / s);
  return p;
}

int sgn(double v) { return (v > 0) - (v < 0); }

TrainedModel small_cnn(std::uint64_t seed) {
  auto m = build_classifier(desk_classifier_spec({1, 8, 8}, 4, 4), seed);
  m.frozen = true;
  return m;
}

Tensor random_images(std::size_t n, const Shape& item, std::uint64_t seed) {
  Rng rng(seed);
  Shape s{n};
  s.insert(s.end(), item.begin(), item.end());
  Tensor x(s);
  for (auto& v : x.data()) v = std::round(rng.uniform(0.0, 255.0));
  return x;
}

const AttackFamily kAll[] = {AttackFamily::kFast, AttackFamily::kIterativeLinf,
                             AttackFamily::kIterativeL2, AttackFamily::kDeepFoolL2,
                             AttackFamily::kDeepFoolLinf};

}  // namespace

TEST_CASE("fast gradient sign on a linear model matches the analytic gradient sign") {
  const std::vector<std::vector<double>> w{{0.3, -0.2, 0.0, 1.0}, {-0.1, 0.4, 0.5, 0.2}, {0.2, 0.2, -0.7, 0.1}};
  const std::vector<double> b{0.1, -0.3, 0.05};
  const auto m = linear(w, b);
  const std::vector<double> x{100.0, 20.0, 254.5, 0.5};
  const int y = 1;
  std::vector<double> z(3);
  for (int k = 0; k < 3; ++k) {
    z[k] = b[k];
    for (int j = 0; j < 4; ++j) z[k] += w[k][j] * x[j];
  }
  const auto p = softmax(z);
  for (double eps : {0.0, 1.0, 2.0}) {
    CAPTURE(eps);
    const auto e = fast_gradient_sign(m, Tensor({4}, x), y, AttackConfig::defaults(AttackFamily::kFast, eps));
    for (int j = 0; j < 4; ++j) {
      double g = 0.0;
      for (int k = 0; k < 3; ++k) g += (p[k] - (k == y ? 1.0 : 0.0)) * w[k][j];
      const double want = std::clamp(x[j] + eps * sgn(g), 0.0, 255.0);
      CHECK(e.perturbed[j] == want);
    }
    CHECK(e.linf <= eps);
  }
}

TEST_CASE("zero budget leaves inputs unchanged") {
  const auto m = small_cnn(1);
  const Tensor x = random_images(3, {1, 8, 8}, 2);
  const std::vector<int> y{0, 1, 2};
  for (auto f : {AttackFamily::kFast, AttackFamily::kIterativeLinf, AttackFamily::kIterativeL2}) {
    CAPTURE(attack_family_name(f));
    for (const auto& e : attack_batch(m, x, y, AttackConfig::defaults(f, 0.0))) {
      CHECK(e.perturbed == e.original);
      CHECK(e.linf == 0.0);
    }
  }
  auto det = build_detector(features_shape(m, 2), topology_for_attachment(m, 2), 3);
  det.frozen = true;
  const DetectorRef ref{&det, 2};
  for (const auto& e : attack_batch(m, x, y, AttackConfig::defaults(AttackFamily::kDynamic, 0.0), &ref))
    CHECK(e.perturbed == e.original);
}

TEST_CASE("one iterative step of size eps equals the fast method") {
  const auto m = small_cnn(3);
  const Tensor x = random_images(4, {1, 8, 8}, 4);
  const std::vector<int> y{0, 1, 2, 3};
  for (double eps : {0.5, 1.0, 4.0}) {
    auto it = AttackConfig::defaults(AttackFamily::kIterativeLinf, eps);
    it.alpha = eps;
    it.max_iter = 1;
    const auto a = attack_batch(m, x, y, it);
    const auto b = attack_batch(m, x, y, AttackConfig::defaults(AttackFamily::kFast, eps));
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].perturbed == b[i].perturbed);
  }
}

TEST_CASE("every family respects its budget and the pixel range") {
  const auto m = small_cnn(5);
  const Tensor x = random_images(6, {1, 8, 8}, 6);
  const std::vector<int> y{0, 1, 2, 3, 0, 1};
  for (auto f : kAll) {
    for (double eps : {0.25, 1.0, 3.0, 40.0}) {
      auto cfg = AttackConfig::defaults(f, eps);
      if (is_l2(f) && !is_deepfool(f)) cfg.alpha = eps / 2;
      CAPTURE(cfg.id());
      for (const auto& e : attack_batch(m, x, y, cfg)) {
        if (is_l2(f))
          CHECK(e.l2 <= eps * (1.0 + 1e-12));
        else
          CHECK(e.linf <= eps);
        for (double v : e.perturbed.data()) CHECK((v >= 0.0 && v <= 255.0));
      }
    }
  }
}

TEST_CASE("l2 step moves exactly alpha along the normalized gradient") {
  const auto m = linear({{1.0, 2.0, -2.0}, {0.0, 0.0, 0.0}}, {0.0, 0.0});
  auto cfg = AttackConfig::defaults(AttackFamily::kIterativeL2, 10.0);
  cfg.alpha = 1.5;
  cfg.max_iter = 1;
  const Tensor x({3}, {50.0, 60.0, 70.0});
  const auto e = basic_iterative_l2(m, x, 0, cfg);
  // For two classes the input gradient of the loss at y = 0 is p1 * (w1 - w0).
  const double dir[3] = {-1.0 / 3.0, -2.0 / 3.0, 2.0 / 3.0};
  for (int j = 0; j < 3; ++j) CHECK(e.perturbed[j] == doctest::Approx(x[j] + 1.5 * dir[j]).epsilon(1e-12));
  CHECK(e.l2 == doctest::Approx(1.5).epsilon(1e-12));
}

TEST_CASE("projections") {
  const Tensor c({3}, {1.0, 2.0, 3.0});
  SUBCASE("points inside the l2 ball are unchanged") {
    const Tensor p({3}, {1.5, 2.0, 3.0});
    CHECK(project_l2_ball(p, c, 1.0) == p);
  }
  SUBCASE("points outside land on the sphere along the same ray") {
    const Tensor p({3}, {4.0, 6.0, 3.0});  // offset (3, 4, 0), length 5
    const Tensor q = project_l2_ball(p, c, 2.0);
    CHECK(q[0] == doctest::Approx(1.0 + 1.2));
    CHECK(q[1] == doctest::Approx(2.0 + 1.6));
    CHECK(q[2] == 3.0);
  }
  SUBCASE("linf clip is exact for awkward decimals") {
    Rng rng(9);
    for (int t = 0; t < 1000; ++t) {
      const double center = rng.uniform(0.0, 1.0);
      const double eps = rng.uniform(0.0, 0.3);
      const Tensor q = clip_linf(Tensor({1}, {center + rng.uniform(-1.0, 1.0)}), Tensor({1}, {center}),
                                 eps, 0.0, 1.0);
      CHECK(std::abs(q[0] - center) <= eps);
      CHECK((q[0] >= 0.0 && q[0] <= 1.0));
    }
  }
  SUBCASE("shape mismatch") { CHECK_THROWS_AS(project_l2_ball(Tensor({2}), c, 1.0), ShapeError); }
}

TEST_CASE("deepfool reaches the linear decision boundary") {
  const std::vector<double> w0{0.5, -1.0, 2.0}, w1{-0.5, 1.0, 0.5};
  const auto m = linear({w0, w1}, {1.0, -2.0});
  const Tensor x({3}, {120.0, 100.0, 90.0});
  double margin = 1.0 - (-2.0), n2 = 0.0, n1 = 0.0;
  for (int j = 0; j < 3; ++j) {
    const double d = w1[j] - w0[j];
    margin -= d * x[j];
    n2 += d * d;
    n1 += std::abs(d);
  }
  REQUIRE(margin > 0.0);  // class 0 wins at x
  SUBCASE("l2") {
    const auto e = deepfool(m, x, 0, AttackConfig::defaults(AttackFamily::kDeepFoolL2, kUnbounded));
    CHECK(e.fooled);
    CHECK(e.status == AttackStatus::kOk);
    CHECK(e.iterations == 1);
    CHECK(e.l2 == doctest::Approx(margin / std::sqrt(n2)).epsilon(1e-6));
  }
  SUBCASE("linf") {
    const auto e = deepfool(m, x, 0, AttackConfig::defaults(AttackFamily::kDeepFoolLinf, kUnbounded));
    CHECK(e.fooled);
    CHECK(e.linf == doctest::Approx(margin / n1).epsilon(1e-6));
  }
  SUBCASE("cap") {
    const auto e = deepfool(m, x, 0, AttackConfig::defaults(AttackFamily::kDeepFoolL2, 0.5 * margin / std::sqrt(n2)));
    CHECK_FALSE(e.fooled);
    CHECK(e.l2 <= 0.5 * margin / std::sqrt(n2) * (1.0 + 1e-12));
  }
  SUBCASE("already misclassified inputs are returned unchanged") {
    const auto e = deepfool(m, x, 1, AttackConfig::defaults(AttackFamily::kDeepFoolL2, kUnbounded));
    CHECK(e.perturbed == x);
    CHECK(e.iterations == 0);
  }
}

TEST_CASE("zero gradients are reported as degenerate") {
  const auto m = linear({{0.0, 0.0}, {0.0, 0.0}}, {0.0, 0.0});
  const Tensor x({2}, {10.0, 20.0});
  for (auto f : {AttackFamily::kIterativeL2, AttackFamily::kDeepFoolL2, AttackFamily::kDeepFoolLinf}) {
    CAPTURE(attack_family_name(f));
    const auto e = attack_batch(m, x.reshaped({1, 2}), std::vector<int>{0}, AttackConfig::defaults(f, 5.0))[0];
    CHECK(e.status == AttackStatus::kDegenerate);
    CHECK(e.perturbed == x);
  }
  CHECK(fast_gradient_sign(m, x, 0, AttackConfig::defaults(AttackFamily::kFast, 5.0)).perturbed == x);
}

TEST_CASE("dynamic attack") {
  const auto m = small_cnn(7);
  auto det = build_detector(features_shape(m, 2), topology_for_attachment(m, 2), 8);
  det.frozen = true;
  const DetectorRef ref{&det, 2};
  const Tensor x = random_images(5, {1, 8, 8}, 9);
  const std::vector<int> y{0, 1, 2, 3, 0};

  SUBCASE("sigma 0 equals the iterative method with the same step") {
    auto dyn = AttackConfig::defaults(AttackFamily::kDynamic, 1.0);
    auto it = AttackConfig::defaults(AttackFamily::kIterativeLinf, 1.0);
    it.alpha = dyn.alpha;
    it.max_iter = dyn.max_iter;
    const auto a = attack_batch(m, x, y, dyn, &ref);
    const auto b = attack_batch(m, x, y, it);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].perturbed == b[i].perturbed);
  }
  SUBCASE("sigma 1 lowers the detector output") {
    auto cfg = AttackConfig::defaults(AttackFamily::kDynamic, 2.0);
    cfg.sigma = 1.0;
    const auto out = attack_batch(m, x, y, cfg, &ref);
    const auto start = attack_batch(m, x, y, AttackConfig::defaults(AttackFamily::kDynamic, 0.0), &ref);
    double before = 0.0, after = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) {
      before += *start[i].p_adv;
      after += *out[i].p_adv;
    }
    CHECK(after < before);
  }
  SUBCASE("per-example sigmas match single runs") {
    const std::vector<double> sigmas{0.0, 0.3, 0.5, 0.9, 1.0};
    const auto cfg = AttackConfig::defaults(AttackFamily::kDynamic, 1.0);
    const auto batch = dynamic_attack_batch(m, ref, x, y, cfg, sigmas);
    for (std::size_t i = 0; i < sigmas.size(); ++i) {
      auto one = cfg;
      one.sigma = sigmas[i];
      CHECK(dynamic_attack(m, ref, x.rows(i, 1).reshaped({1, 8, 8}), y[i], one) == batch[i]);
    }
  }
  SUBCASE("a detector is required") {
    CHECK_THROWS_AS(attack_batch(m, x, y, AttackConfig::defaults(AttackFamily::kDynamic, 1.0)), ConfigError);
  }
}

TEST_CASE("batched attacks equal single-example attacks") {
  const auto m = small_cnn(10);
  const Tensor x = random_images(3, {1, 8, 8}, 11);
  const std::vector<int> y{3, 0, 1};
  for (auto f : kAll) {
    CAPTURE(attack_family_name(f));
    const auto cfg = AttackConfig::defaults(f, is_l2(f) ? 60.0 : 2.0);
    const auto batch = attack_batch(m, x, y, cfg);
    for (std::size_t i = 0; i < y.size(); ++i) {
      const auto single = attack_batch(m, x.rows(i, 1), std::span<const int>(&y[i], 1), cfg);
      CHECK(single[0] == batch[i]);
    }
  }
}

TEST_CASE("larger budgets do more damage to a linear model") {
  const auto m = linear({{0.02, -0.01, 0.03, 0.0}, {-0.01, 0.02, 0.0, 0.03}}, {0.0, 0.0});
  const Tensor x = random_images(200, {4}, 12);
  const auto y = predict_labels(m, x);
  double prev = 1.0;
  for (double eps : {0.0, 1.0, 2.0, 4.0, 8.0, 16.0}) {
    std::size_t correct = 0;
    for (const auto& e : attack_batch(m, x, y, AttackConfig::defaults(AttackFamily::kIterativeLinf, eps)))
      correct += e.fooled ? 0 : 1;
    const double acc = static_cast<double>(correct) / 200.0;
    CHECK(acc <= prev);
    prev = acc;
  }
  CHECK(prev < 1.0);
}

TEST_CASE("attack config") {
  SUBCASE("family defaults") {
    const auto it = AttackConfig::defaults(AttackFamily::kIterativeLinf);
    CHECK(it.alpha == 1.0);
    CHECK(it.max_iter == 10);
    CHECK(AttackConfig::defaults(AttackFamily::kIterativeL2).alpha == 20.0);
    CHECK(AttackConfig::defaults(AttackFamily::kDynamic).alpha == 0.25);
  }
  SUBCASE("validation") {
    auto c = AttackConfig::defaults(AttackFamily::kIterativeLinf, 1.0);
    c.epsilon = -1.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = AttackConfig::defaults(AttackFamily::kIterativeLinf, 1.0);
    c.alpha = 0.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = AttackConfig::defaults(AttackFamily::kDynamic, 1.0);
    c.sigma = 1.5;
    CHECK_THROWS_AS(c.validate(), ConfigError);
  }
  SUBCASE("names and JSON") {
    for (auto f : kAll) CHECK(attack_family_from_name(attack_family_name(f)) == f);
    CHECK_THROWS_AS(attack_family_from_name("pgd"), ConfigError);
    auto c = AttackConfig::defaults(AttackFamily::kDynamic, 1.0);
    c.sigma = 0.3;
    CHECK(attack_config_from_json(to_json(c)) == c);
    CHECK(attack_config_from_json(to_json(AttackConfig::defaults(AttackFamily::kDeepFoolL2, kUnbounded))) ==
          AttackConfig::defaults(AttackFamily::kDeepFoolL2, kUnbounded));
    CHECK(AttackConfig::defaults(AttackFamily::kIterativeLinf, 2.0).id() == "iterative_linf:eps=2");
  }
  SUBCASE("inputs are checked") {
    const auto m = small_cnn(1);
    const auto cfg = AttackConfig::defaults(AttackFamily::kFast, 1.0);
    CHECK_THROWS_AS(attack_batch(m, Tensor({1, 1, 8, 8}, 300.0), std::vector<int>{0}, cfg), ConfigError);
    CHECK_THROWS_AS(attack_batch(m, Tensor({1, 1, 8, 8}, 3.0), std::vector<int>{7}, cfg), ConfigError);
    CHECK_THROWS_AS(attack_batch(m, Tensor({1, 1, 4, 4}, 3.0), std::vector<int>{0}, cfg), ShapeError);
  }
}
