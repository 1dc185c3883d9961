#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "advdet/error.hpp"
#include "advdet/pipeline.hpp"
#include "advdet/report.hpp"

using namespace advdet;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string classifier;
  std::string bundle;
  std::string attack;
  std::optional<double> epsilon;
  std::optional<int> ad_index;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "run config JSON (a manifest.json also works)")
      ->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "master seed (overrides the config)");
  cmd->add_option("--out", c.out, "output directory (overrides output_dir)");
  cmd->add_option("--classifier", c.classifier, "frozen classifier container");
  cmd->add_option("--bundle", c.bundle, "detector bundle container");
  cmd->add_option("--attack", c.attack, "attack family replacing the configured attacks");
  cmd->add_option("--epsilon", c.epsilon, "budget for --attack, or for the configured attacks");
  cmd->add_option("--ad-index", c.ad_index, "detector attachment point");
}

RunConfig resolve(const Common& c) {
  RunConfig cfg = c.config.empty() ? RunConfig{} : load_run_config(c.config);
  if (c.seed) cfg.seed = *c.seed;
  if (!c.out.empty()) cfg.output_dir = c.out;
  if (!c.classifier.empty()) cfg.classifier_path = c.classifier;
  if (!c.bundle.empty()) cfg.bundle_path = c.bundle;
  if (!c.attack.empty()) {
    const auto family = attack_family_from_name(c.attack);
    cfg.attacks = {AttackConfig::defaults(family, c.epsilon.value_or(1.0))};
  } else if (c.epsilon) {
    for (auto& a : cfg.attacks) {
      a.epsilon = *c.epsilon;
      if (a.family == AttackFamily::kFast) a.alpha = *c.epsilon;
    }
    cfg.dynamic_attack.epsilon = *c.epsilon;
  }
  if (c.ad_index) cfg.ad_index = *c.ad_index;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adversarial example detection toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(git_describe()));

  Common common;
  CommandOptions options;
  std::string command;
  for (const auto& name : command_names()) {
    auto* cmd = app.add_subcommand(name);
    add_common(cmd, common);
    if (name == "train-detector")
      cmd->add_flag("--dynamic", options.dynamic, "dynamic adversary training");
    if (name == "transfer")
      cmd->add_option("--kind", options.transfer, "epsilon | adversary | both")
          ->check(CLI::IsMember({"epsilon", "adversary", "both"}));
    if (name == "gen-adv")
      cmd->add_option("--split", options.split, "train | test")->check(CLI::IsMember({"train", "test"}));
    cmd->callback([&command, name] { command = name; });
  }
  std::string manifest_path, rerun_out;
  auto* rerun = app.add_subcommand("rerun", "repeat the run recorded in a manifest");
  rerun->add_option("manifest", manifest_path)->required()->check(CLI::ExistingFile);
  rerun->add_option("--out", rerun_out, "output directory")->required();
  rerun->callback([&command] { command = "rerun"; });

  CLI11_PARSE(app, argc, argv);
  try {
    if (command == "rerun") {
      rerun_manifest(read_manifest(manifest_path), rerun_out);
      std::cout << rerun_out << "/manifest.json\n";
      return 0;
    }
    const RunConfig cfg = resolve(common);
    run_command(command, cfg, cfg.output_dir, options);
    std::cout << cfg.output_dir << "/manifest.json\n";
  } catch (const Error& e) {
    std::cerr << "advdet " << command << ": " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "advdet " << command << ": " << e.what() << "\n";
    return 1;
  }
  return 0;
}
