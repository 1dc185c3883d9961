#include "advdet/pipeline.hpp"

#include <cstdio>
#include <iostream>

#include "advdet/error.hpp"
#include "advdet/random.hpp"
#include "advdet/report.hpp"
#include "advdet/serialize.hpp"

namespace advdet {

namespace {

namespace fs = std::filesystem;

struct Context {
  const RunConfig& cfg;
  const CommandOptions& options;
  fs::path out;
  nlohmann::json inputs = nlohmann::json::object();
  nlohmann::json outputs = nlohmann::json::object();
  nlohmann::json results = nlohmann::json::object();

  void log(const std::string& msg) const { std::clog << "[advdet] " << msg << std::endl; }

  TrainedModel classifier() {
    if (cfg.classifier_path.empty()) throw ConfigError("this command needs a classifier_path");
    inputs["classifier"] = {{"path", cfg.classifier_path},
                            {"fnv1a", file_checksum(cfg.classifier_path)}};
    auto m = load_model(cfg.classifier_path);
    if (!m.frozen) throw ConfigError("classifier at '" + cfg.classifier_path + "' is not frozen");
    return m;
  }

  DetectorBundle bundle() {
    if (cfg.bundle_path.empty()) throw ConfigError("this command needs a bundle_path");
    inputs["bundle"] = {{"path", cfg.bundle_path}, {"fnv1a", file_checksum(cfg.bundle_path)}};
    return load_bundle(cfg.bundle_path);
  }

  DataSplits data() const {
    auto d = load_data(cfg);
    log("data: " + std::to_string(d.train.size()) + " train, " + std::to_string(d.val.size()) +
        " val, " + std::to_string(d.test.size()) + " test");
    return d;
  }

  void wrote(const std::string& name) { outputs[name] = file_checksum(out / name); }

  template <class T>
  void report(const std::string& name, const T& rows) {
    write_report(out / name, rows);
    wrote(name);
  }
};

void write_history(Context& ctx, const std::string& name, const std::vector<EpochRecord>& history) {
  std::string csv = "epoch,train_loss,val_accuracy\n";
  for (const auto& h : history)
    csv += std::to_string(h.epoch) + "," + format_number(h.train_loss) + "," +
           format_number(h.val_accuracy) + "\n";
  write_text(ctx.out / name, csv);
  ctx.wrote(name);
}

nlohmann::json choices_json(const FoolingAttacks& f) {
  nlohmann::json j = nlohmann::json::array();
  for (std::size_t i = 0; i < f.names.size(); ++i) {
    nlohmann::json e{{"adversary", f.names[i]},
                     {"grid", f.choices[i].grid},
                     {"accuracies", f.choices[i].accuracies}};
    e["epsilon"] = f.attacks[i] ? nlohmann::json(f.attacks[i]->epsilon) : nlohmann::json(nullptr);
    j.push_back(std::move(e));
  }
  return j;
}

void train_classifier_cmd(Context& ctx) {
  const auto d = ctx.data();
  const auto spec = classifier_spec_for(ctx.cfg, d.train.item_shape(), d.train.class_count);
  const auto init = build_classifier(spec, ctx.cfg.derived_seed("classifier_init"));
  OptimizerConfig opt = ctx.cfg.classifier_opt;
  opt.seed = ctx.cfg.derived_seed("classifier_train");
  ctx.log("training classifier for " + std::to_string(opt.epochs) + " epochs");
  auto res = train_supervised(init, d.train, d.val, opt);
  res.model.frozen = true;
  save_model(res.model, ctx.out / "classifier.advm");
  ctx.wrote("classifier.advm");
  write_history(ctx, "history.csv", res.history);
  const double acc = accuracy(res.model, d.test);
  ctx.log("clean test accuracy " + format_number(acc));
  ctx.results = {{"test_accuracy", acc},
                 {"best_epoch", res.best_epoch},
                 {"parameters", res.model.params.trainable_count()}};
}

void gen_adv_cmd(Context& ctx) {
  const auto model = ctx.classifier();
  const auto d = ctx.data();
  if (ctx.options.split != "train" && ctx.options.split != "test")
    throw ConfigError("gen-adv split must be train or test");
  const auto& source = ctx.options.split == "train" ? d.train : d.test;
  const AttackConfig& attack = ctx.cfg.attacks.front();
  std::optional<DetectorBundle> bundle;
  if (attack.family == AttackFamily::kDynamic) bundle = ctx.bundle();
  const auto ref = bundle ? std::optional(bundle->ref()) : std::nullopt;
  ctx.log("attacking " + std::to_string(source.size()) + " examples with " + attack.id());
  AdversarialSet set{attack, attack_dataset(model, source, attack, ref ? &*ref : nullptr)};
  save_adversarial(set, ctx.out / "adversarial.adve");
  ctx.wrote("adversarial.adve");
  EvalReport r;
  r.adversary = attack.id();
  r.epsilon = attack.epsilon;
  if (attack.family == AttackFamily::kDynamic) r.sigma = attack.sigma;
  r.accuracy = accuracy_of(set.examples);
  r.n_original = source.size();
  r.n_adversarial = set.examples.size();
  for (const auto& e : set.examples) r.n_degenerate += e.status == AttackStatus::kDegenerate;
  r.seed = ctx.cfg.seed;
  ctx.report("attack.csv", std::vector{r});
}

void train_detector_cmd(Context& ctx) {
  const auto model = ctx.classifier();
  const auto d = ctx.data();
  const auto setup = detector_setup_for(ctx.cfg);
  auto bundle = make_bundle(model, setup.ad_index, setup.topology, mix_seed(setup.seed, 11));
  OptimizerConfig opt = setup.opt;
  opt.seed = mix_seed(setup.seed, 12);
  DetectorTraining trained;
  AttackConfig attack;
  if (ctx.options.dynamic) {
    attack = ctx.cfg.dynamic_attack;
    ctx.log("dynamic detector training at AD(" + std::to_string(setup.ad_index) + ") with " +
            attack.id());
    trained = train_dynamic_detector(bundle, d.train, attack, opt);
  } else {
    attack = ctx.cfg.attacks.front();
    ctx.log("static dataset from " + attack.id());
    const auto dataset = generate_static_dataset(model, d.train, attack);
    ctx.log("static detector training at AD(" + std::to_string(setup.ad_index) + ")");
    trained = train_static_detector(bundle, dataset, opt);
    trained.bundle.attack = attack;
  }
  save_bundle(trained.bundle, ctx.out / "bundle.advb");
  ctx.wrote("bundle.advb");
  write_history(ctx, "history.csv", trained.history);
  std::vector<EvalReport> reports;
  if (ctx.options.dynamic) {
    reports = dynamic_eval(trained.bundle, d.test, ctx.cfg.sigma_grid, attack,
                           ctx.cfg.derived_seed("evaluation"));
  } else {
    reports.push_back(
        evaluate_bundle(trained.bundle, d.test, attack, ctx.cfg.derived_seed("evaluation")));
  }
  ctx.report("eval.csv", reports);
  ctx.results = {{"best_epoch", trained.best_epoch}, {"mode", training_mode_name(trained.bundle.mode)}};
}

void eval_cmd(Context& ctx) {
  const auto bundle = ctx.bundle();
  const auto d = ctx.data();
  std::vector<EvalReport> reports;
  for (std::size_t i = 0; i < ctx.cfg.attacks.size(); ++i) {
    const auto& a = ctx.cfg.attacks[i];
    ctx.log("evaluating against " + a.id());
    reports.push_back(evaluate_bundle(bundle, d.test, a, mix_seed(ctx.cfg.derived_seed("evaluation"), i)));
  }
  ctx.report("eval.csv", reports);
}

void transfer_cmd(Context& ctx) {
  const auto& kind = ctx.options.transfer;
  if (kind != "epsilon" && kind != "adversary" && kind != "both")
    throw ConfigError("transfer kind must be epsilon, adversary or both");
  const auto model = ctx.classifier();
  const auto d = ctx.data();
  const auto setup = detector_setup_for(ctx.cfg);
  if (kind != "adversary") {
    const auto family = ctx.cfg.transfer_family;
    ctx.log(std::string("epsilon transfer for ") + attack_family_name(family));
    const auto m = epsilon_transfer_matrix(model, adversary_base(ctx.cfg, family),
                                           grid_for(ctx.cfg, family), d.train, d.test, setup);
    ctx.report("transfer_epsilon.csv", m);
  }
  if (kind != "epsilon") {
    ctx.log("selecting fooling-strength epsilons");
    const auto f = fooling_attacks(model, d.test, ctx.cfg);
    ctx.results["fooling"] = choices_json(f);
    ctx.log("cross-adversary transfer");
    const auto m = cross_adversary_matrix(model, f.attacks, f.names, d.train, d.test, setup);
    ctx.report("transfer_adversary.csv", m);
  }
}

void depth_sweep_cmd(Context& ctx) {
  const auto model = ctx.classifier();
  const auto d = ctx.data();
  ctx.log("selecting fooling-strength epsilons");
  const auto f = fooling_attacks(model, d.test, ctx.cfg);
  ctx.results["fooling"] = choices_json(f);
  ctx.log("depth sweep");
  const auto cells = depth_sweep(model, f.attacks, f.names, ctx.cfg.ad_indices, d.train, d.test,
                                 detector_setup_for(ctx.cfg));
  ctx.report("depth.csv", cells);
}

void dynamic_eval_cmd(Context& ctx) {
  const auto bundle = ctx.bundle();
  const auto d = ctx.data();
  ctx.log("dynamic evaluation over " + std::to_string(ctx.cfg.sigma_grid.size()) + " sigmas");
  const auto reports = dynamic_eval(bundle, d.test, ctx.cfg.sigma_grid, ctx.cfg.dynamic_attack,
                                    ctx.cfg.derived_seed("evaluation"));
  ctx.report("dynamic_eval.csv", reports);
}

}  // namespace

nlohmann::json to_json(const CommandOptions& o) {
  return {{"dynamic", o.dynamic}, {"transfer", o.transfer}, {"split", o.split}};
}

CommandOptions command_options_from_json(const nlohmann::json& j) {
  CommandOptions o;
  if (j.contains("dynamic")) o.dynamic = j.at("dynamic").get<bool>();
  if (j.contains("transfer")) o.transfer = j.at("transfer").get<std::string>();
  if (j.contains("split")) o.split = j.at("split").get<std::string>();
  return o;
}

const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names{"train-classifier", "gen-adv",     "train-detector",
                                              "eval",             "transfer",    "depth-sweep",
                                              "dynamic-eval"};
  return names;
}

nlohmann::json run_command(const std::string& command, const RunConfig& cfg, const fs::path& out,
                           const CommandOptions& options) {
  cfg.validate();
  fs::create_directories(out);
  Context ctx{cfg, options, out};
  if (command == "train-classifier") train_classifier_cmd(ctx);
  else if (command == "gen-adv") gen_adv_cmd(ctx);
  else if (command == "train-detector") train_detector_cmd(ctx);
  else if (command == "eval") eval_cmd(ctx);
  else if (command == "transfer") transfer_cmd(ctx);
  else if (command == "depth-sweep") depth_sweep_cmd(ctx);
  else if (command == "dynamic-eval") dynamic_eval_cmd(ctx);
  else throw ConfigError("unknown command '" + command + "'");
  nlohmann::json manifest{{"command", command},
                          {"options", to_json(options)},
                          {"config", to_json(cfg)},
                          {"seeds", cfg.seeds()},
                          {"inputs", ctx.inputs},
                          {"outputs", ctx.outputs},
                          {"results", ctx.results}};
  write_manifest(out / "manifest.json", manifest);
  manifest["git_describe"] = git_describe();
  return manifest;
}

nlohmann::json rerun_manifest(const nlohmann::json& manifest, const fs::path& out) {
  if (!manifest.contains("command") || !manifest.contains("config"))
    throw ConfigError("manifest lacks a command or config");
  const auto options = manifest.contains("options") ? command_options_from_json(manifest.at("options"))
                                                    : CommandOptions{};
  return run_command(manifest.at("command").get<std::string>(), run_config_from_json(manifest),
                     out, options);
}

std::string file_checksum(const fs::path& path) {
  const auto bytes = read_file(path);
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(bytes)));
  return buf;
}

}  // namespace advdet
