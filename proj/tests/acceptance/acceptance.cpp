#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "advdet/config.hpp"
#include "advdet/error.hpp"
#include "advdet/gradcheck.hpp"
#include "advdet/ops.hpp"
#include "advdet/pipeline.hpp"
#include "advdet/random.hpp"
#include "advdet/report.hpp"
#include "advdet/serialize.hpp"

using namespace advdet;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t) {
  return std::chrono::duration<double>(Clock::now() - t).count();
}

std::string fmt(const char* f, auto... args) {
  std::string s(std::snprintf(nullptr, 0, f, args...), '\0');
  std::snprintf(s.data(), s.size() + 1, f, args...);
  return s;
}

std::string opt_str(const std::optional<double>& v) { return v ? fmt("%.3f", *v) : "null"; }

struct Outcome {
  bool pass = false;
  std::string detail;
};

// Lazily produced pipeline artifacts shared by several criteria. Every
// experiment runs through run_command so that it leaves a manifest behind.
// An experiment's config is the base config merged with its override.
class Workspace {
 public:
  Workspace(nlohmann::json base, nlohmann::json overrides, fs::path root)
      : base_(std::move(base)), overrides_(std::move(overrides)), root_(std::move(root)),
        cfg_(run_config_from_json(base_)) {}

  const RunConfig& config() const { return cfg_; }
  const fs::path& root() const { return root_; }

  RunConfig config_for(const std::string& name) const {
    auto j = base_;
    if (overrides_.contains(name)) j.merge_patch(overrides_.at(name));
    return run_config_from_json(j);
  }

  const nlohmann::json& run(const std::string& name, const std::string& command, RunConfig cfg,
                            CommandOptions options = {}) {
    for (const auto& [n, m] : runs_)
      if (n == name) return m;
    const auto t = Clock::now();
    auto m = run_command(command, cfg, root_ / name, options);
    seconds_[name] = since(t);
    runs_.emplace_back(name, std::move(m));
    return runs_.back().second;
  }

  // Runs `command` with the classifier trained by the "classifier" experiment.
  const nlohmann::json& run_with_classifier(const std::string& name, const std::string& command,
                                            CommandOptions options = {}) {
    auto c = config_for(name);
    c.classifier_path = classifier_path().string();
    return run(name, command, c, options);
  }

  double seconds(const std::string& name) const {
    auto it = seconds_.find(name);
    return it == seconds_.end() ? 0.0 : it->second;
  }

  const std::vector<std::pair<std::string, nlohmann::json>>& runs() const { return runs_; }

  const nlohmann::json& classifier_run() {
    return run("classifier", "train-classifier", config_for("classifier"));
  }

  fs::path classifier_path() {
    classifier_run();
    return root_ / "classifier" / "classifier.advm";
  }

  const TrainedModel& classifier() {
    if (!classifier_) classifier_ = load_model(classifier_path());
    return *classifier_;
  }

  const DataSplits& data() {
    if (!data_) data_ = load_data(cfg_);
    return *data_;
  }

  fs::path static_bundle_path() {
    run_with_classifier("static_detector", "train-detector");
    return root_ / "static_detector" / "bundle.advb";
  }

  fs::path dynamic_bundle_path() {
    run_with_classifier("dynamic_detector", "train-detector", {.dynamic = true});
    return root_ / "dynamic_detector" / "bundle.advb";
  }

 private:
  nlohmann::json base_;
  nlohmann::json overrides_;
  fs::path root_;
  RunConfig cfg_;
  std::vector<std::pair<std::string, nlohmann::json>> runs_;
  std::map<std::string, double> seconds_;
  std::optional<TrainedModel> classifier_;
  std::optional<DataSplits> data_;
};

Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = scale * rng.normal();
  return t;
}

NetworkSpec single(Shape input, LayerSpec l) {
  NetworkSpec s;
  s.input_shape = std::move(input);
  s.layers = {l};
  s.attach_points = {{0, 0}};
  return s;
}

// Biases and shifts drawn away from zero so no gradient vanishes exactly.
ParameterSet jittered(const NetworkSpec& spec, std::uint64_t seed) {
  auto params = init_parameters(spec, seed);
  Rng rng(mix_seed(seed, 1));
  for (std::size_t p = 0; p < params.size(); ++p) {
    const auto& key = params.key(p);
    if (key.ends_with("bias") || key.ends_with("beta"))
      for (auto& v : params.value(p).data()) v = 0.3 * rng.normal();
  }
  return params;
}

// A random sequential network: conv or residual blocks with a random
// nonlinearity, an optional pool, then GAP and a dense head.
NetworkSpec random_network(Rng& rng) {
  NetworkSpec s;
  const std::size_t c = 1 + rng.below(2);
  s.input_shape = {c, 6, 6};
  const LayerKind acts[] = {LayerKind::kRelu, LayerKind::kTanh, LayerKind::kSigmoid};
  const std::size_t blocks = 1 + rng.below(2);
  for (std::size_t b = 0; b < blocks; ++b) {
    const std::size_t ch = 2 + rng.below(2);
    if (rng.below(2)) s.layers.push_back(residual(ch));
    else s.layers.push_back(conv(ch, rng.below(2) ? 3 : 1));
    if (rng.below(2)) s.layers.push_back(layer(LayerKind::kBatchNorm));
    s.layers.push_back(layer(acts[rng.below(3)]));
    if (b == 0 && rng.below(2)) s.layers.push_back(layer(LayerKind::kMaxPool));
  }
  s.layers.push_back(layer(LayerKind::kGlobalAvgPool));
  s.layers.push_back(dense(3));
  s.attach_points = {{0, 0}};
  return s;
}

Outcome gradient_correctness() {
  const auto t = Clock::now();
  auto half_norm = [](Tape& tape, NodeId out) { return ops::half_squared_norm(tape, out); };
  struct Case {
    std::string name;
    NetworkSpec spec;
    Mode mode;
    std::size_t batch;
    LossBuilder loss;
  };
  std::vector<Case> cases{
      {"dense", single({6}, dense(4)), Mode::kEval, 3, half_norm},
      {"conv3", single({2, 5, 5}, conv(3)), Mode::kEval, 2, half_norm},
      {"conv1", single({2, 5, 5}, conv(3, 1)), Mode::kEval, 2, half_norm},
      {"max_pool", single({2, 4, 4}, layer(LayerKind::kMaxPool)), Mode::kEval, 2, half_norm},
      {"gap", single({3, 4, 4}, layer(LayerKind::kGlobalAvgPool)), Mode::kEval, 2, half_norm},
      {"relu", single({8}, layer(LayerKind::kRelu)), Mode::kEval, 3, half_norm},
      {"tanh", single({8}, layer(LayerKind::kTanh)), Mode::kEval, 3, half_norm},
      {"sigmoid", single({8}, layer(LayerKind::kSigmoid)), Mode::kEval, 3, half_norm},
      {"softmax", single({5}, layer(LayerKind::kSoftmax)), Mode::kEval, 3, half_norm},
      {"batch_norm_eval", single({3, 3, 3}, layer(LayerKind::kBatchNorm)), Mode::kEval, 3, half_norm},
      {"residual_add", single({2, 4, 4}, residual(3)), Mode::kEval, 2, half_norm},
      {"cross_entropy", single({4}, dense(4)), Mode::kEval, 3,
       [](Tape& tape, NodeId out) {
         return ops::cross_entropy(tape, ops::softmax(tape, out), std::vector<int>{0, 2, 3},
                                   ops::Reduction::kSum);
       }},
      {"sigmoid_bce", single({4}, dense(1)), Mode::kEval, 3,
       [](Tape& tape, NodeId out) {
         return ops::sigmoid_binary_cross_entropy(tape, out, std::vector<int>{1, 0, 1});
       }},
  };
  auto bn_train = single({3, 3, 3}, layer(LayerKind::kBatchNorm));
  bn_train.layers.push_back(dense(3));
  cases.push_back({"batch_norm_train", bn_train, Mode::kTrain, 4, half_norm});
  Rng rng(2024);
  for (int i = 0; i < 3; ++i) {
    auto spec = random_network(rng);
    cases.push_back({"random_network_" + std::to_string(i), spec, Mode::kEval, 2,
                     [](Tape& tape, NodeId out) {
                       return ops::softmax_cross_entropy(tape, out, std::vector<int>{0, 2});
                     }});
  }

  double worst = 0.0;
  std::string worst_name;
  std::size_t checked = 0;
  for (std::size_t i = 0; i < cases.size(); ++i) {
    const auto& c = cases[i];
    Shape batch{c.batch};
    batch.insert(batch.end(), c.spec.input_shape.begin(), c.spec.input_shape.end());
    const auto r = finite_diff_check(c.spec, jittered(c.spec, 300 + i), random_tensor(batch, rng),
                                     c.loss, {1e-5, true, true, c.mode});
    checked += r.checked;
    if (r.max_relative_error >= worst) {
      worst = r.max_relative_error;
      worst_name = c.name;
    }
  }
  const double secs = since(t);
  return {worst < 1e-4 && secs < 60.0,
          fmt("%zu cases, %zu coordinates, max rel err %.2e (%s), %.1fs", cases.size(), checked,
              worst, worst_name.c_str(), secs)};
}

double linf_dist(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double l2_dist(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

LabeledDataset budget_images(const RunConfig& cfg, std::size_t n) {
  auto c = cfg;
  const auto classes = c.dataset.synth.classes;
  c.dataset.synth_test_per_class = (n + classes - 1) / classes;
  c.dataset.max_test = n;
  return load_data(c).test;
}

Outcome attack_budgets(Workspace& ws) {
  const auto& model = ws.classifier();
  const auto bundle = load_bundle(ws.static_bundle_path());
  const auto& cfg = ws.config();
  const auto t = Clock::now();
  const auto images = budget_images(cfg, 1000);
  const double linf_eps = cfg.linf_grid.back();
  const double l2_eps = cfg.l2_grid.back();
  auto dyn = cfg.dynamic_attack;
  dyn.sigma = 0.5;
  std::vector<AttackConfig> attacks{
      adversary_base(cfg, AttackFamily::kFast, linf_eps),
      adversary_base(cfg, AttackFamily::kIterativeLinf, linf_eps),
      adversary_base(cfg, AttackFamily::kIterativeL2, l2_eps),
      AttackConfig::defaults(AttackFamily::kDeepFoolL2, l2_eps),
      AttackConfig::defaults(AttackFamily::kDeepFoolLinf, linf_eps),
      dyn,
  };
  bool ok = images.size() == 1000;
  std::ostringstream detail;
  detail << images.size() << " images;";
  const auto ref = bundle.ref();
  for (const auto& a : attacks) {
    const auto ex = attack_dataset(model, images, a, &ref);
    double worst = 0.0;
    bool in_box = ex.size() == images.size();
    for (const auto& e : ex) {
      worst = std::max(worst, is_l2(a.family) ? l2_dist(e.perturbed, e.original)
                                              : linf_dist(e.perturbed, e.original));
      for (double v : e.perturbed.data()) in_box = in_box && v >= kPixelMin && v <= kPixelMax;
    }
    const bool held = is_l2(a.family) ? worst <= a.epsilon + 1e-6 : worst <= a.epsilon;
    ok = ok && held && in_box;
    detail << " " << a.id() << " max " << fmt("%.6g", worst) << (held && in_box ? "" : " VIOLATED")
           << ";";
  }
  const double secs = since(t);
  detail << fmt(" %.1fs", secs);
  return {ok && secs < 300.0, detail.str()};
}

Outcome reduction_identity(Workspace& ws) {
  const auto& model = ws.classifier();
  const auto images = budget_images(ws.config(), 100);
  const double eps = ws.config().dynamic_attack.epsilon;
  const auto fgsm = AttackConfig::defaults(AttackFamily::kFast, eps);
  auto bim = AttackConfig::defaults(AttackFamily::kIterativeLinf, eps);
  bim.max_iter = 1;
  bim.alpha = eps;
  std::size_t equal = 0;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto x = images.item(i);
    const auto a = fast_gradient_sign(model, x, images.labels[i], fgsm);
    const auto b = basic_iterative_linf(model, x, images.labels[i], bim);
    equal += a.perturbed == b.perturbed;
  }
  return {equal == 100 && images.size() == 100,
          fmt("%zu/%zu images identical at eps %g", equal, images.size(), eps)};
}

Outcome attack_efficacy(Workspace& ws) {
  const auto& m = ws.classifier_run();
  const double clean = m.at("results").at("test_accuracy").get<double>();
  const auto t = Clock::now();
  const auto& cfg = ws.config();
  const auto choice = select_epsilon(ws.classifier(), ws.data().test,
                                     adversary_base(cfg, AttackFamily::kIterativeLinf),
                                     cfg.linf_grid, kFoolingThreshold);
  const double secs = ws.seconds("classifier") + since(t);
  std::ostringstream acc;
  for (std::size_t i = 0; i < choice.accuracies.size(); ++i)
    acc << (i ? " " : "") << choice.grid[i] << ":" << fmt("%.3f", choice.accuracies[i]);
  const auto params = ws.classifier().params.trainable_count();
  return {clean >= 0.97 && choice.epsilon && params <= 100000 && secs < 600.0,
          fmt("clean accuracy %.4f, %zu params, iterative_linf accuracy by eps {%s}, chosen eps %s, "
              "%.1fs",
              clean, params, acc.str().c_str(),
              choice.epsilon ? fmt("%g", *choice.epsilon).c_str() : "none", secs)};
}

// Missing rows or columns read as undefined.
std::optional<double> cell(const TransferMatrix& m, const std::string& row, const std::string& col) {
  const auto has = [](const auto& v, const std::string& x) {
    return std::find(v.begin(), v.end(), x) != v.end();
  };
  return has(m.rows, row) && has(m.cols, col) ? m.at(row, col) : std::nullopt;
}

fs::path adversary_transfer(Workspace& ws) {
  ws.run_with_classifier("transfer_adversary", "transfer", {.transfer = "adversary"});
  return ws.root() / "transfer_adversary" / "transfer_adversary.csv";
}

Outcome static_detectability(Workspace& ws) {
  const auto m = read_transfer(adversary_transfer(ws));
  const auto secs = ws.seconds("transfer_adversary");
  struct Floor {
    const char* name;
    double floor;
  };
  const Floor floors[] = {{"iterative_linf", 0.80}, {"iterative_l2", 0.80}, {"deepfool_l2", 0.75}};
  bool ok = secs < 1800.0;
  std::ostringstream d;
  d << "AD(" << ws.config_for("transfer_adversary").ad_index << ")";
  for (const auto& f : floors) {
    const auto v = cell(m, f.name, f.name);
    ok = ok && v && *v >= f.floor;
    std::string eps = "?";
    for (const auto& [n, run] : ws.runs())
      if (n == "transfer_adversary")
        for (const auto& e : run.at("results").at("fooling"))
          if (e.at("adversary") == f.name)
            eps = e.at("epsilon").is_null() ? "unbounded" : fmt("%g", e.at("epsilon").get<double>());
    d << " " << f.name << "(eps " << eps << ") " << opt_str(v) << " >= " << f.floor << ";";
  }
  d << fmt(" %.1fs", secs);
  return {ok, d.str()};
}

Outcome epsilon_transfer(Workspace& ws) {
  const auto& run = ws.run_with_classifier("transfer_epsilon", "transfer", {.transfer = "epsilon"});
  const auto m = read_transfer(ws.root() / "transfer_epsilon" / "transfer_epsilon.csv");
  const auto lo = m.rows.front(), hi = m.rows.back();
  const auto up = cell(m, lo, hi), down = cell(m, hi, lo);
  const bool ok = up && down && *up - *down >= 0.05;
  const auto cfg = run_config_from_json(run);
  return {ok, fmt("AD(%d) %s fit %s test %s: %s; fit %s test %s: %s; gap %s", cfg.ad_index,
                  attack_family_name(cfg.transfer_family), lo.c_str(), hi.c_str(),
                  opt_str(up).c_str(), hi.c_str(), lo.c_str(), opt_str(down).c_str(),
                  up && down ? fmt("%+.3f", *up - *down).c_str() : "n/a")};
}

Outcome adversary_transfer_direction(Workspace& ws) {
  const auto m = read_transfer(adversary_transfer(ws));
  const auto it_fast = cell(m, "iterative_linf", "fast");
  const auto fast_it = cell(m, "fast", "iterative_linf");
  const bool ok = it_fast && fast_it && *it_fast >= 0.70 && *fast_it < *it_fast;
  return {ok, fmt("fit iterative_linf test fast %s (>= 0.70); fit fast test iterative_linf %s "
                  "(< %s)",
                  opt_str(it_fast).c_str(), opt_str(fast_it).c_str(), opt_str(it_fast).c_str())};
}

std::string sigma_table(const std::vector<EvalReport>& reports) {
  std::ostringstream d;
  for (const auto& r : reports)
    d << " " << fmt("%.1f", r.sigma.value_or(-1)) << ":" << fmt("%.2f", r.accuracy) << "/"
      << opt_str(r.detectability);
  return d.str();
}

Outcome dynamic_beats_static(Workspace& ws) {
  auto c = ws.config_for("static_detector");
  c.classifier_path = ws.classifier_path().string();
  c.bundle_path = ws.static_bundle_path().string();
  ws.run("static_dynamic_eval", "dynamic-eval", c);
  const auto reports = read_eval_reports(ws.root() / "static_dynamic_eval" / "dynamic_eval.csv");
  const auto stat = read_eval_reports(ws.root() / "static_detector" / "eval.csv");
  std::optional<double> hit;
  for (const auto& r : reports)
    if (r.detectability && *r.detectability <= 0.65 && r.accuracy <= 0.50 && !hit) hit = r.sigma;
  const bool ok = hit && c.dynamic_attack.epsilon == 1.0;
  return {ok, fmt("AD(%d) static detector (static detectability %s); sigma:accuracy/detectability%s; "
                  "first qualifying sigma %s",
                  c.ad_index, opt_str(stat.front().detectability).c_str(),
                  sigma_table(reports).c_str(), hit ? fmt("%.1f", *hit).c_str() : "none")};
}

Outcome dynamic_robustness(Workspace& ws) {
  ws.dynamic_bundle_path();
  const auto reports = read_eval_reports(ws.root() / "dynamic_detector" / "eval.csv");
  bool ok = reports.size() == ws.config().sigma_grid.size();
  double worst = 1.0;
  std::size_t undefined = 0;
  for (const auto& r : reports) {
    if (!r.detectability) {
      ++undefined;
      continue;
    }
    worst = std::min(worst, *r.detectability);
  }
  ok = ok && worst >= 0.65 && undefined < reports.size();
  const double secs = ws.seconds("dynamic_detector");
  ok = ok && secs < 3600.0;
  return {ok, fmt("AD(%d); sigma:accuracy/detectability%s; min %.3f over %zu sigmas (%zu undefined), "
                  "%.1fs",
                  ws.config_for("dynamic_detector").ad_index, sigma_table(reports).c_str(), worst,
                  reports.size(), undefined,
                  secs)};
}

bool same_bytes(const fs::path& a, const fs::path& b) {
  return fs::exists(a) && fs::exists(b) && read_file(a) == read_file(b);
}

Outcome determinism(Workspace& ws, const std::set<std::string>& rerun) {
  std::size_t files = 0, runs = 0;
  std::vector<std::string> bad;
  const auto done = ws.runs();
  for (const auto& [name, manifest] : done) {
    if (!rerun.count(name)) continue;
    const auto stored = read_manifest(ws.root() / name / "manifest.json");
    const auto again = ws.root() / "rerun" / name;
    rerun_manifest(stored, again);
    ++runs;
    for (const auto& [file, sum] : stored.at("outputs").items()) {
      ++files;
      if (!same_bytes(ws.root() / name / file, again / file)) bad.push_back(name + "/" + file);
    }
  }
  std::string d = fmt("%zu manifests rerun, %zu output files compared", runs, files);
  for (const auto& b : bad) d += "; differs: " + b;
  return {runs > 0 && bad.empty(), d};
}

// Zeroes the detector's output layer so p_adv is exactly 0.5.
DetectorBundle constant(DetectorBundle b) {
  std::size_t last = 0;
  for (std::size_t i = 0; i < b.detector.spec.layers.size(); ++i)
    if (b.detector.spec.layers[i].kind == LayerKind::kDense) last = i;
  const std::string prefix = std::to_string(last) + ".";
  for (std::size_t i = 0; i < b.detector.params.size(); ++i)
    if (b.detector.params.key(i).rfind(prefix, 0) == 0) b.detector.params.value(i).fill(0.0);
  return b;
}

Outcome protocol_invariants(Workspace& ws) {
  const auto& model = ws.classifier();
  const auto classifier_sum = file_checksum(ws.classifier_path());
  const auto& test = ws.data().test;
  bool balanced = true;
  std::size_t reports = 0;
  for (const auto& [name, manifest] : ws.runs())
    if (fs::exists(ws.root() / name / "eval.csv"))
      for (const auto& r : read_eval_reports(ws.root() / name / "eval.csv")) {
        ++reports;
        if (!r.sigma) balanced = balanced && r.n_original == r.n_adversarial && r.n_original == test.size();
      }
  const auto bundle = load_bundle(ws.static_bundle_path());
  const auto ex = attack_dataset(model, test, bundle.attack);
  const auto joint = joint_test_set(ex, 7);
  const auto ones = std::count(joint.labels.begin(), joint.labels.end(), 1);
  balanced = balanced && joint.labels.size() == 2 * test.size() &&
             static_cast<std::size_t>(ones) == test.size();

  const auto flat = constant(bundle);
  const double static_score = detectability(flat, ex, 7);
  const auto dyn = dynamic_eval(flat, test, ws.config().sigma_grid, ws.config().dynamic_attack, 7);
  bool constant_ok = static_score == 0.5;
  for (const auto& r : dyn) constant_ok = constant_ok && (!r.detectability || *r.detectability == 0.5);

  bool frozen = true;
  std::size_t bundles = 0;
  for (const auto& [name, manifest] : ws.runs()) {
    const auto p = ws.root() / name / "bundle.advb";
    if (!fs::exists(p)) continue;
    ++bundles;
    frozen = frozen && load_bundle(p).classifier == model;
  }
  DetectionDataset d = generate_static_dataset(model, ws.data().train.head(200), bundle.attack);
  auto opt = ws.config().detector_opt;
  opt.epochs = 2;
  const auto fresh = make_bundle(model, ws.config().ad_index, ws.config().detector, 3);
  const auto direct = train_static_detector(fresh, d, opt);
  frozen = frozen && direct.bundle.classifier == model &&
           file_checksum(ws.classifier_path()) == classifier_sum;
  ++bundles;

  return {balanced && constant_ok && frozen && bundles > 1,
          fmt("balanced %s (%zu reports, joint set %zu/%zu); constant detector %.3f static, %s over "
              "%zu sigmas; classifier bit-identical in %zu detector trainings: %s",
              balanced ? "yes" : "NO", reports, static_cast<std::size_t>(ones), joint.labels.size(),
              static_score, constant_ok ? "0.5 or null" : "NOT 0.5", dyn.size(), bundles,
              frozen ? "yes" : "NO")};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance suite: one line per criterion"};
  std::string work = "acceptance_work";
  std::string config = ADVDET_ACCEPTANCE_CONFIG;
  std::vector<int> only;
  app.add_option("--work", work, "scratch directory for experiment outputs");
  app.add_option("--config", config, "acceptance run config")->check(CLI::ExistingFile);
  app.add_option("--only", only, "run only these criteria (1-11)")->delimiter(',');
  CLI11_PARSE(app, argc, argv);

  // Either a plain run config or {"run": base, "experiments": {name: override}}.
  const auto doc = nlohmann::json::parse(read_text(config));
  const bool split = doc.contains("run");
  fs::remove_all(work);
  Workspace ws(split ? doc.at("run") : doc,
               split && doc.contains("experiments") ? doc.at("experiments") : nlohmann::json::object(),
               work);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient correctness", [] { return gradient_correctness(); }},
      {"attack budget invariants", [&] { return attack_budgets(ws); }},
      {"reduction identity", [&] { return reduction_identity(ws); }},
      {"attack efficacy", [&] { return attack_efficacy(ws); }},
      {"static detectability", [&] { return static_detectability(ws); }},
      {"epsilon transfer asymmetry", [&] { return epsilon_transfer(ws); }},
      {"cross-adversary transfer direction", [&] { return adversary_transfer_direction(ws); }},
      {"dynamic attack beats static detector", [&] { return dynamic_beats_static(ws); }},
      {"dynamic detector robustness", [&] { return dynamic_robustness(ws); }},
      {"determinism and provenance",
       [&] { return determinism(ws, {"classifier", "static_detector", "static_dynamic_eval"}); }},
      {"balance and protocol invariants", [&] { return protocol_invariants(ws); }},
  };

  const auto start = Clock::now();
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " " << id << " " << criteria[i].first << ": "
              << o.detail << std::endl;
  }
  std::cout << fmt("%d failed, %.0fs total", failed, since(start)) << std::endl;
  return failed ? 1 : 0;
}
