#include <doctest.h>

#include <filesystem>
#include <functional>

#include "advdet/config.hpp"
#include "advdet/error.hpp"
#include "advdet/pipeline.hpp"
#include "advdet/report.hpp"
#include "advdet/serialize.hpp"

using namespace advdet;
namespace fs = std::filesystem;

namespace {

fs::path tmp_dir(const std::string& name) {
  const fs::path p = fs::path(ADVDET_TEST_TMP) / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

LabeledDataset tiny_images(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
  Rng rng(1);
  Tensor x({n, c, h, w});
  for (auto& v : x.data()) v = static_cast<double>(rng.below(256));
  std::vector<int> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = static_cast<int>(rng.below(10));
  return {x, y, 10, Split::kTrain};
}

std::uint64_t offset_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const FormatError& e) {
    return e.offset();
  }
  FAIL("no FormatError");
  return 0;
}

RunConfig tiny_config() {
  RunConfig cfg;
  cfg.dataset.synth.classes = 3;
  cfg.dataset.synth.per_class = 8;
  cfg.dataset.synth.dims = {1, 8, 8};
  cfg.dataset.synth_test_per_class = 4;
  cfg.model.base_channels = 4;
  cfg.classifier_opt.epochs = 2;
  cfg.classifier_opt.batch_size = 8;
  cfg.detector_opt.epochs = 1;
  cfg.detector_opt.batch_size = 8;
  cfg.attacks = {AttackConfig::defaults(AttackFamily::kFast, 2.0)};
  cfg.seed = 3;
  return cfg;
}

}  // namespace

TEST_CASE("IDX round trip and malformed files") {
  const auto d = tiny_images(5, 1, 4, 3);
  const auto img = encode_idx_images(d);
  const auto lab = encode_idx_labels(d);
  CHECK(img.size() == 16 + 5 * 12);
  CHECK(img[2] == 0x08);
  CHECK(img[3] == 3);
  CHECK(img[7] == 5);  // big-endian count
  const auto back = decode_idx(img, lab);
  CHECK(back.images == d.images);
  CHECK(back.labels == d.labels);

  auto bad = img;
  bad[2] = 0x09;
  CHECK(offset_of([&] { decode_idx(bad, lab); }) == 0);
  bad = img;
  bad.pop_back();
  CHECK(offset_of([&] { decode_idx(bad, lab); }) == img.size() - 1);
  bad = img;
  bad.push_back(0);
  CHECK(offset_of([&] { decode_idx(bad, lab); }) == img.size());
  auto badlab = lab;
  badlab[8 + 2] = 42;
  CHECK(offset_of([&] { decode_idx(img, badlab); }) == 10);

  const auto dir = tmp_dir("idx");
  write_idx(d, dir / "i.idx", dir / "l.idx");
  CHECK(load_idx(dir / "i.idx", dir / "l.idx") == back);
}

TEST_CASE("CIFAR binary round trip and malformed files") {
  const auto d = tiny_images(3, 3, 32, 32);
  const auto bytes = encode_cifar_binary(d);
  CHECK(bytes.size() == 3 * 3073);
  CHECK(bytes[0] == d.labels[0]);
  const auto back = decode_cifar_binary(bytes);
  CHECK(back.images == d.images);
  CHECK(back.labels == d.labels);
  auto bad = bytes;
  bad.pop_back();
  CHECK_THROWS_AS(decode_cifar_binary(bad), FormatError);
  bad = bytes;
  bad[3073] = 10;
  CHECK(offset_of([&] { decode_cifar_binary(bad); }) == 3073);
}

TEST_CASE("containers round trip and reject corruption") {
  auto m = build_classifier(desk_classifier_spec({1, 8, 8}, 3, 4, true), 2);
  m.frozen = true;
  const auto bytes = encode_model(m);
  CHECK(std::string(bytes.begin(), bytes.begin() + 8) == "ADVMODEL");
  CHECK(decode_model(bytes) == m);

  SUBCASE("flipped payload byte") {
    auto bad = bytes;
    bad[bad.size() / 2] ^= 0x10;
    CHECK_THROWS_AS(decode_model(bad), FormatError);
  }
  SUBCASE("truncation") {
    auto bad = bytes;
    bad.resize(bytes.size() - 3);
    CHECK_THROWS_AS(decode_model(bad), FormatError);
  }
  SUBCASE("wrong kind") {
    const auto b = make_bundle(m, 2, DetectorTopology{}, 3);
    CHECK_THROWS_AS(decode_model(encode_bundle(b)), FormatError);
    CHECK(decode_bundle(encode_bundle(b)).detector == b.detector);
  }
  SUBCASE("adversarial sets") {
    LabeledDataset d{Tensor({2, 1, 8, 8}, 7.0), {0, 2}, 3, Split::kTest};
    AdversarialSet set{AttackConfig::defaults(AttackFamily::kFast, 1.0), {}};
    set.examples = attack_dataset(m, d, set.attack);
    const auto enc = encode_adversarial(set);
    CHECK(decode_adversarial(enc) == set);
    const auto dir = tmp_dir("containers");
    save_adversarial(set, dir / "a.adve");
    CHECK(load_adversarial(dir / "a.adve") == set);
  }
  CHECK(fnv1a(std::vector<std::uint8_t>{}) == 0xcbf29ce484222325ull);
  const std::string a = "a";
  CHECK(fnv1a(std::span(reinterpret_cast<const std::uint8_t*>(a.data()), 1)) == 0xaf63dc4c8601ec8cull);
}

TEST_CASE("reports") {
  SUBCASE("eval reports round trip with nulls") {
    std::vector<EvalReport> r(2);
    r[0] = {"fast:eps=2", 2.0, std::nullopt, 0.25, 0.875, 30, 30, 1, 7};
    r[1] = {"dynamic:eps=1:sigma=0.1", 1.0, 0.1, 0.3, std::nullopt, 30, 0, 0, 8};
    const auto csv = eval_reports_csv(r);
    CHECK(csv.rfind(std::string(kEvalHeader) + "\n", 0) == 0);
    CHECK(parse_eval_reports(csv) == r);
  }
  SUBCASE("columns are checked") {
    CHECK_THROWS_AS(parse_eval_reports("adversary,epsilon\n"), FormatError);
    CHECK_THROWS_AS(parse_depth("adversary,ad_index,detectability,extra\nx,1,0.5,3\n"), FormatError);
    CHECK_THROWS_AS(parse_depth("adversary,ad_index,detectability\nx,1\n"), FormatError);
  }
  SUBCASE("transfer and depth") {
    TransferMatrix t{"eps_fit", "eps_test", {"1", "2"}, {"1", "2"}, {{0.9, std::nullopt}, {0.8, 0.7}}};
    CHECK(parse_transfer(transfer_csv(t)) == t);
    std::vector<DepthCell> cells{{"fast", 0, 0.6}, {"fast", 1, std::nullopt}};
    CHECK(parse_depth(depth_csv(cells)) == cells);
  }
  CHECK(format_number(0.1) == "0.1");
  CHECK(std::stod(format_number(1.0 / 3.0)) == 1.0 / 3.0);
}

TEST_CASE("run config") {
  auto cfg = tiny_config();
  CHECK(to_json(run_config_from_json(to_json(cfg))) == to_json(cfg));
  CHECK(run_config_from_json({{"seed", 9}}).classifier_opt.epochs == RunConfig{}.classifier_opt.epochs);
  CHECK(cfg.derived_seed("detector") != cfg.derived_seed("holdout"));
  CHECK_THROWS_AS(cfg.derived_seed("nope"), ConfigError);
  cfg.dataset.source = "idx";
  cfg.dataset.train_images = "/nonexistent/train-images";
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = tiny_config();
  cfg.dynamic_attack = AttackConfig::defaults(AttackFamily::kFast);
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("commands write manifests and reruns reproduce them") {
  const auto cfg = tiny_config();
  const auto dir = tmp_dir("pipeline");
  const auto m = run_command("train-classifier", cfg, dir / "cls");
  CHECK(fs::exists(dir / "cls" / "manifest.json"));
  CHECK(m["command"] == "train-classifier");
  CHECK(m.contains("git_describe"));
  CHECK(m["seeds"]["master"] == 3);
  const auto again = rerun_manifest(read_manifest(dir / "cls" / "manifest.json"), dir / "cls2");
  CHECK(again["outputs"] == m["outputs"]);
  CHECK(read_text(dir / "cls" / "history.csv") == read_text(dir / "cls2" / "history.csv"));

  auto with_cls = cfg;
  with_cls.classifier_path = (dir / "cls" / "classifier.advm").string();
  const auto det = run_command("train-detector", with_cls, dir / "det");
  CHECK(fs::exists(dir / "det" / "bundle.advb"));
  CHECK(det["inputs"].size() == 1);
  CHECK(read_eval_reports(dir / "det" / "eval.csv").size() == 1);

  CHECK_THROWS_AS(run_command("fly", cfg, dir / "x"), ConfigError);
  CHECK_THROWS_AS(run_command("eval", cfg, dir / "x"), ConfigError);  // needs a bundle
  CHECK(command_names().size() == 7);
}
