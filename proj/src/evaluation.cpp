#include "advdet/evaluation.hpp"

#include <algorithm>
#include <sstream>

#include "advdet/error.hpp"
#include "advdet/random.hpp"

namespace advdet {

namespace {

std::string number(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

void require_examples(std::span<const AdversarialExample> examples) {
  if (examples.empty()) throw ConfigError("empty test set");
}

std::size_t count_degenerate(std::span<const AdversarialExample> examples) {
  std::size_t n = 0;
  for (const auto& e : examples) n += e.status == AttackStatus::kDegenerate;
  return n;
}

std::vector<AdversarialExample> attack_for(const DetectorBundle& bundle, const LabeledDataset& test,
                                           const AttackConfig& attack) {
  if (test.empty()) throw ConfigError("empty test set");
  if (attack.family == AttackFamily::kDynamic) {
    const auto ref = bundle.ref();
    return attack_dataset(bundle.classifier, test, attack, &ref);
  }
  return attack_dataset(bundle.classifier, test, attack);
}

}  // namespace

std::optional<double> TransferMatrix::at(const std::string& row, const std::string& col) const {
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < cols.size(); ++c)
      if (rows[r] == row && cols[c] == col) return cells[r][c];
  throw ConfigError("no cell (" + row + ", " + col + ")");
}

double joint_accuracy(std::span<const double> p_original, std::span<const double> p_adversarial) {
  const std::size_t n = p_original.size() + p_adversarial.size();
  if (n == 0) throw ConfigError("empty joint set");
  std::size_t correct = 0;
  for (double p : p_original) correct += !is_flagged(p);
  for (double p : p_adversarial) correct += is_flagged(p);
  return static_cast<double>(correct) / static_cast<double>(n);
}

JointSet joint_test_set(std::span<const AdversarialExample> examples, std::uint64_t seed) {
  require_examples(examples);
  std::vector<std::size_t> order(2 * examples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);
  std::vector<Tensor> items;
  JointSet out;
  items.reserve(order.size());
  for (auto k : order) {
    const auto& e = examples[k / 2];
    items.push_back(k % 2 == 0 ? e.original : e.perturbed);
    out.labels.push_back(static_cast<int>(k % 2));
  }
  out.inputs = stack(items);
  return out;
}

double detectability(const DetectorBundle& bundle, std::span<const AdversarialExample> examples,
                     std::uint64_t seed) {
  const JointSet joint = joint_test_set(examples, seed);
  const auto p = detect_batch(bundle, joint.inputs);
  std::vector<double> orig, adv;
  for (std::size_t i = 0; i < p.size(); ++i) (joint.labels[i] ? adv : orig).push_back(p[i]);
  return joint_accuracy(orig, adv);
}

Detectability detectability(const DetectorBundle& bundle, const LabeledDataset& test,
                            const AttackConfig& attack, std::uint64_t seed) {
  const auto adv = attack_for(bundle, test, attack);
  return {detectability(bundle, adv, seed), accuracy_of(adv), adv.size(), count_degenerate(adv)};
}

double accuracy_of(std::span<const AdversarialExample> examples) {
  require_examples(examples);
  std::size_t ok = 0;
  for (const auto& e : examples) ok += e.pred_after == e.true_label;
  return static_cast<double>(ok) / static_cast<double>(examples.size());
}

double accuracy_under_attack(const TrainedModel& model, const LabeledDataset& test,
                             const AttackConfig& attack) {
  if (test.empty()) throw ConfigError("empty test set");
  return accuracy_of(attack_dataset(model, test, attack));
}

EpsilonChoice select_epsilon(const TrainedModel& model, const LabeledDataset& test,
                             const AttackConfig& base, std::span<const double> grid,
                             double threshold) {
  EpsilonChoice choice;
  choice.grid.assign(grid.begin(), grid.end());
  std::sort(choice.grid.begin(), choice.grid.end());
  for (double eps : choice.grid) {
    AttackConfig cfg = base;
    cfg.epsilon = eps;
    if (cfg.family == AttackFamily::kFast) cfg.alpha = eps;
    const double acc = accuracy_under_attack(model, test, cfg);
    choice.accuracies.push_back(acc);
    if (acc < threshold) {
      choice.epsilon = eps;
      break;
    }
  }
  return choice;
}

DetectorBundle fit_static_detector(const TrainedModel& model, const LabeledDataset& train,
                                   const AttackConfig& attack, const DetectorSetup& setup) {
  const auto dataset = generate_static_dataset(model, train, attack);
  auto bundle = make_bundle(model, setup.ad_index, setup.topology, mix_seed(setup.seed, 11));
  OptimizerConfig opt = setup.opt;
  opt.seed = mix_seed(setup.seed, 12);
  auto trained = train_static_detector(bundle, dataset, opt);
  trained.bundle.attack = attack;
  return std::move(trained.bundle);
}

EvalReport evaluate_bundle(const DetectorBundle& bundle, const LabeledDataset& test,
                           const AttackConfig& attack, std::uint64_t seed) {
  const auto adv = attack_for(bundle, test, attack);
  EvalReport r;
  r.adversary = attack.id();
  r.epsilon = attack.epsilon;
  if (attack.family == AttackFamily::kDynamic) r.sigma = attack.sigma;
  r.accuracy = accuracy_of(adv);
  r.detectability = detectability(bundle, adv, seed);
  r.n_original = adv.size();
  r.n_adversarial = adv.size();
  r.n_degenerate = count_degenerate(adv);
  r.seed = seed;
  return r;
}

std::uint64_t cell_seed(std::uint64_t master, std::size_t row, std::size_t col) {
  return mix_seed(mix_seed(master, 1000 + row), 2000 + col);
}

TransferMatrix epsilon_transfer_matrix(const TrainedModel& model, const AttackConfig& base,
                                       std::span<const double> grid, const LabeledDataset& train,
                                       const LabeledDataset& test, const DetectorSetup& setup) {
  if (grid.empty()) throw ConfigError("empty epsilon grid");
  TransferMatrix m;
  m.row_label = "eps_fit";
  m.col_label = "eps_test";
  std::vector<AttackConfig> cfgs;
  std::vector<std::vector<AdversarialExample>> test_sets;
  for (double eps : grid) {
    AttackConfig cfg = base;
    cfg.epsilon = eps;
    if (cfg.family == AttackFamily::kFast) cfg.alpha = eps;
    cfgs.push_back(cfg);
    m.rows.push_back(number(eps));
    m.cols.push_back(number(eps));
    test_sets.push_back(attack_dataset(model, test, cfg));
  }
  for (std::size_t r = 0; r < cfgs.size(); ++r) {
    DetectorSetup s = setup;
    s.seed = cell_seed(setup.seed, r, 0);
    const auto bundle = fit_static_detector(model, train, cfgs[r], s);
    std::vector<std::optional<double>> row;
    for (std::size_t c = 0; c < cfgs.size(); ++c)
      row.push_back(detectability(bundle, test_sets[c], cell_seed(setup.seed, r, c + 1)));
    m.cells.push_back(std::move(row));
  }
  return m;
}

TransferMatrix cross_adversary_matrix(const TrainedModel& model,
                                      std::span<const std::optional<AttackConfig>> attacks,
                                      std::span<const std::string> names,
                                      const LabeledDataset& train, const LabeledDataset& test,
                                      const DetectorSetup& setup) {
  if (attacks.size() != names.size()) throw ConfigError("one name per adversary required");
  if (attacks.empty()) throw ConfigError("no adversaries");
  TransferMatrix m;
  m.row_label = "fit_adversary";
  m.col_label = "test_adversary";
  m.rows.assign(names.begin(), names.end());
  m.cols.assign(names.begin(), names.end());
  std::vector<std::vector<AdversarialExample>> test_sets(attacks.size());
  for (std::size_t c = 0; c < attacks.size(); ++c)
    if (attacks[c]) test_sets[c] = attack_dataset(model, test, *attacks[c]);
  for (std::size_t r = 0; r < attacks.size(); ++r) {
    std::vector<std::optional<double>> row(attacks.size());
    if (attacks[r]) {
      DetectorSetup s = setup;
      s.seed = cell_seed(setup.seed, r, 0);
      const auto bundle = fit_static_detector(model, train, *attacks[r], s);
      for (std::size_t c = 0; c < attacks.size(); ++c)
        if (attacks[c]) row[c] = detectability(bundle, test_sets[c], cell_seed(setup.seed, r, c + 1));
    }
    m.cells.push_back(std::move(row));
  }
  return m;
}

std::vector<DepthCell> depth_sweep(const TrainedModel& model,
                                   std::span<const std::optional<AttackConfig>> attacks,
                                   std::span<const std::string> names, std::span<const int> ad_indices,
                                   const LabeledDataset& train, const LabeledDataset& test,
                                   const DetectorSetup& setup) {
  if (attacks.size() != names.size()) throw ConfigError("one name per adversary required");
  for (int ad : ad_indices)
    if (!model.spec.has_attach_point(ad))
      throw ConfigError("unknown attachment point AD(" + std::to_string(ad) + ")");
  std::vector<DepthCell> out;
  for (std::size_t a = 0; a < attacks.size(); ++a) {
    std::vector<AdversarialExample> test_set;
    if (attacks[a]) test_set = attack_dataset(model, test, *attacks[a]);
    for (std::size_t k = 0; k < ad_indices.size(); ++k) {
      DepthCell cell{names[a], ad_indices[k], std::nullopt};
      if (attacks[a]) {
        DetectorSetup s = setup;
        s.ad_index = ad_indices[k];
        s.seed = cell_seed(setup.seed, a, k);
        const auto bundle = fit_static_detector(model, train, *attacks[a], s);
        cell.detectability = detectability(bundle, test_set, cell_seed(setup.seed, a, k + 1000));
      }
      out.push_back(std::move(cell));
    }
  }
  return out;
}

std::vector<EvalReport> dynamic_eval(const DetectorBundle& bundle, const LabeledDataset& test,
                                     std::span<const double> sigmas, const AttackConfig& base,
                                     std::uint64_t seed) {
  if (base.family != AttackFamily::kDynamic) throw ConfigError("dynamic_eval needs a dynamic attack");
  if (test.empty()) throw ConfigError("empty test set");
  bundle.validate();
  const auto p_regular = detect_batch(bundle, test.images);
  std::vector<EvalReport> out;
  for (double sigma : sigmas) {
    AttackConfig cfg = base;
    cfg.sigma = sigma;
    const auto adv = attack_for(bundle, test, cfg);
    std::vector<double> p_success;
    for (const auto& e : adv)
      if (e.pred_before == e.true_label && e.pred_after != e.true_label) p_success.push_back(*e.p_adv);
    EvalReport r;
    r.adversary = cfg.id();
    r.epsilon = cfg.epsilon;
    r.sigma = sigma;
    r.accuracy = accuracy_of(adv);
    r.n_original = test.size();
    r.n_adversarial = p_success.size();
    r.n_degenerate = count_degenerate(adv);
    r.seed = seed;
    if (!p_success.empty()) {
      // Balanced accuracy: the two classes are weighted equally however few
      // adversarial examples succeed.
      const double tnr = joint_accuracy(p_regular, {});
      const double tpr = joint_accuracy({}, p_success);
      r.detectability = 0.5 * tnr + 0.5 * tpr;
    }
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<double> default_sigma_grid() {
  std::vector<double> g;
  for (int i = 0; i <= 10; ++i) g.push_back(i / 10.0);
  return g;
}

}  // namespace advdet
