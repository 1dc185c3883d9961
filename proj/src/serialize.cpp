#include "advdet/serialize.hpp"

#include <bit>
#include <cmath>
#include <cstring>

#include "advdet/error.hpp"

namespace advdet {

namespace {

constexpr char kModelMagic[8] = {'A', 'D', 'V', 'M', 'O', 'D', 'E', 'L'};
constexpr char kBundleMagic[8] = {'A', 'D', 'V', 'B', 'N', 'D', 'L', 'E'};
constexpr char kAdversarialMagic[8] = {'A', 'D', 'V', 'E', 'X', 'M', 'P', 'L'};

class Writer {
 public:
  void raw(std::span<const std::uint8_t> b) { out_.insert(out_.end(), b.begin(), b.end()); }
  void magic(const char (&m)[8]) {
    for (char c : m) out_.push_back(static_cast<std::uint8_t>(c));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void text(const std::string& s) {
    u64(s.size());
    out_.insert(out_.end(), s.begin(), s.end());
  }
  void blob(std::span<const std::uint8_t> b) {
    u64(b.size());
    raw(b);
  }
  void values(std::span<const double> v) {
    for (double x : v) f64(x);
  }
  std::vector<std::uint8_t> finish() {
    u64(fnv1a(out_));
    return std::move(out_);
  }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}

  std::size_t offset() const { return pos_; }
  void need(std::size_t n, const char* what) {
    if (b_.size() - pos_ < n)
      throw FormatError(std::string("truncated container: ") + what, pos_);
  }
  void magic(const char (&m)[8], const char* kind) {
    need(8, "magic");
    if (std::memcmp(b_.data(), m, 8) != 0) throw FormatError(std::string("not a ") + kind + " container", 0);
    pos_ = 8;
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
  }
  double f64(const char* what) { return std::bit_cast<double>(u64(what)); }
  std::span<const std::uint8_t> bytes(std::uint64_t n, const char* what) {
    if (n > b_.size() - pos_) throw FormatError(std::string("truncated container: ") + what, pos_);
    auto s = b_.subspan(pos_, static_cast<std::size_t>(n));
    pos_ += static_cast<std::size_t>(n);
    return s;
  }
  nlohmann::json header() {
    const std::size_t at = pos_;
    const auto len = u64("header length");
    const auto s = bytes(len, "header");
    try {
      return nlohmann::json::parse(s.begin(), s.end());
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(std::string("malformed header: ") + e.what(), at + 8);
    }
  }
  void version() {
    const std::size_t at = pos_;
    const auto v = u32("version");
    if (v != kContainerVersion)
      throw FormatError("unsupported container version " + std::to_string(v), at);
  }
  void checksum() {
    const std::size_t at = pos_;
    const auto expected = fnv1a(b_.subspan(0, pos_));
    const auto stored = u64("checksum");
    if (stored != expected) throw FormatError("checksum mismatch", at);
    if (pos_ != b_.size()) throw FormatError("trailing bytes after checksum", pos_);
  }

 private:
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

template <class F>
auto header_field(const char* container, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string(container) + " header: " + e.what(), 0);
  } catch (const ConfigError& e) {
    throw FormatError(std::string(container) + " header: " + e.what(), 0);
  }
}

}  // namespace

std::uint64_t fnv1a(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (auto b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::vector<std::uint8_t> encode_model(const TrainedModel& model) {
  nlohmann::json params = nlohmann::json::array();
  std::size_t count = 0;
  for (std::size_t i = 0; i < model.params.size(); ++i) {
    params.push_back({{"key", model.params.key(i)},
                      {"shape", model.params.value(i).shape()},
                      {"trainable", model.params.trainable(i)}});
    count += model.params.value(i).size();
  }
  const nlohmann::json header{{"kind", "model"},
                              {"spec", to_json(model.spec)},
                              {"frozen", model.frozen},
                              {"params", params}};
  Writer w;
  w.magic(kModelMagic);
  w.u32(kContainerVersion);
  w.text(header.dump());
  w.u64(count);
  for (std::size_t i = 0; i < model.params.size(); ++i) w.values(model.params.value(i).data());
  return w.finish();
}

TrainedModel decode_model(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  r.magic(kModelMagic, "model");
  r.version();
  const auto header = r.header();
  TrainedModel m;
  std::vector<std::pair<std::string, Shape>> layout;
  std::vector<bool> trainable;
  header_field("model", [&] {
    m.spec = network_spec_from_json(header.at("spec"));
    m.frozen = header.at("frozen").get<bool>();
    for (const auto& p : header.at("params")) {
      layout.emplace_back(p.at("key").get<std::string>(), p.at("shape").get<Shape>());
      trainable.push_back(p.at("trainable").get<bool>());
    }
    m.spec.validate();
    return 0;
  });
  std::size_t expected = 0;
  for (const auto& [key, shape] : layout) expected += shape_numel(shape);
  const std::size_t at = r.offset();
  const auto count = r.u64("value count");
  if (count != expected)
    throw FormatError("value count " + std::to_string(count) + " does not match the " +
                          std::to_string(expected) + " declared by the header",
                      at);
  for (std::size_t i = 0; i < layout.size(); ++i) {
    std::vector<double> v(shape_numel(layout[i].second));
    for (auto& x : v) x = r.f64("parameter values");
    m.params.add(layout[i].first, Tensor(layout[i].second, std::move(v)), trainable[i]);
  }
  r.checksum();
  // The stored parameters must be exactly what the spec instantiates.
  const auto fresh = init_parameters(m.spec, 0);
  if (fresh.size() != m.params.size()) throw FormatError("parameter list does not match the spec", 0);
  for (std::size_t i = 0; i < fresh.size(); ++i) {
    if (fresh.key(i) != m.params.key(i) || fresh.value(i).shape() != m.params.value(i).shape())
      throw FormatError("parameter " + m.params.key(i) + " does not match the spec", 0);
  }
  return m;
}

void save_model(const TrainedModel& model, const std::filesystem::path& path) {
  write_file(path, encode_model(model));
}

TrainedModel load_model(const std::filesystem::path& path) { return decode_model(read_file(path)); }

std::vector<std::uint8_t> encode_bundle(const DetectorBundle& bundle) {
  const nlohmann::json header{{"kind", "detector_bundle"},
                              {"ad_index", bundle.ad_index},
                              {"mode", training_mode_name(bundle.mode)},
                              {"attack", to_json(bundle.attack)}};
  Writer w;
  w.magic(kBundleMagic);
  w.u32(kContainerVersion);
  w.text(header.dump());
  w.blob(encode_model(bundle.classifier));
  w.blob(encode_model(bundle.detector));
  return w.finish();
}

DetectorBundle decode_bundle(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  r.magic(kBundleMagic, "detector bundle");
  r.version();
  const auto header = r.header();
  DetectorBundle b;
  header_field("detector bundle", [&] {
    b.ad_index = header.at("ad_index").get<int>();
    b.mode = training_mode_from_name(header.at("mode").get<std::string>());
    b.attack = attack_config_from_json(header.at("attack"));
    return 0;
  });
  const auto cls = r.bytes(r.u64("classifier length"), "classifier");
  const auto det = r.bytes(r.u64("detector length"), "detector");
  r.checksum();
  b.classifier = decode_model(cls);
  b.detector = decode_model(det);
  try {
    b.validate();
  } catch (const Error& e) {
    throw FormatError(std::string("inconsistent bundle: ") + e.what(), 0);
  }
  return b;
}

void save_bundle(const DetectorBundle& bundle, const std::filesystem::path& path) {
  write_file(path, encode_bundle(bundle));
}

DetectorBundle load_bundle(const std::filesystem::path& path) { return decode_bundle(read_file(path)); }

std::vector<std::uint8_t> encode_adversarial(const AdversarialSet& set) {
  nlohmann::json records = nlohmann::json::array();
  Shape item;
  for (const auto& e : set.examples) {
    if (item.empty()) item = e.original.shape();
    if (e.original.shape() != item || e.perturbed.shape() != item)
      throw ShapeError("adversarial examples differ in shape");
    records.push_back({{"true_label", e.true_label},
                       {"pred_before", e.pred_before},
                       {"pred_after", e.pred_after},
                       {"iterations", e.iterations},
                       {"linf", e.linf},
                       {"l2", e.l2},
                       {"fooled", e.fooled},
                       {"status", attack_status_name(e.status)},
                       {"p_adv", e.p_adv ? nlohmann::json(*e.p_adv) : nlohmann::json()}});
  }
  const nlohmann::json header{{"kind", "adversarial_examples"},
                              {"attack", to_json(set.attack)},
                              {"item_shape", item},
                              {"records", records}};
  Writer w;
  w.magic(kAdversarialMagic);
  w.u32(kContainerVersion);
  w.text(header.dump());
  w.u64(2 * set.examples.size() * shape_numel(item.empty() ? Shape{0} : item));
  for (const auto& e : set.examples) {
    w.values(e.original.data());
    w.values(e.perturbed.data());
  }
  return w.finish();
}

AdversarialSet decode_adversarial(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  r.magic(kAdversarialMagic, "adversarial example");
  r.version();
  const auto header = r.header();
  AdversarialSet set;
  Shape item;
  header_field("adversarial example", [&] {
    set.attack = attack_config_from_json(header.at("attack"));
    item = header.at("item_shape").get<Shape>();
    for (const auto& j : header.at("records")) {
      AdversarialExample e;
      e.true_label = j.at("true_label").get<int>();
      e.pred_before = j.at("pred_before").get<int>();
      e.pred_after = j.at("pred_after").get<int>();
      e.iterations = j.at("iterations").get<std::size_t>();
      e.linf = j.at("linf").get<double>();
      e.l2 = j.at("l2").get<double>();
      e.fooled = j.at("fooled").get<bool>();
      const auto status = j.at("status").get<std::string>();
      if (status == "ok") e.status = AttackStatus::kOk;
      else if (status == "degenerate") e.status = AttackStatus::kDegenerate;
      else if (status == "exhausted") e.status = AttackStatus::kExhausted;
      else throw ConfigError("unknown status '" + status + "'");
      if (!j.at("p_adv").is_null()) e.p_adv = j.at("p_adv").get<double>();
      set.examples.push_back(std::move(e));
    }
    return 0;
  });
  const std::size_t d = set.examples.empty() ? 0 : shape_numel(item);
  const std::size_t at = r.offset();
  const auto count = r.u64("value count");
  if (count != 2 * d * set.examples.size())
    throw FormatError("value count does not match the declared records", at);
  for (auto& e : set.examples) {
    std::vector<double> a(d), b(d);
    for (auto& x : a) x = r.f64("original values");
    for (auto& x : b) x = r.f64("perturbed values");
    e.original = Tensor(item, std::move(a));
    e.perturbed = Tensor(item, std::move(b));
  }
  r.checksum();
  for (std::size_t i = 0; i < set.examples.size(); ++i) {
    const auto& e = set.examples[i];
    if (std::abs(distance_linf(e.perturbed.data(), e.original.data()) - e.linf) > 1e-9 ||
        std::abs(distance_l2(e.perturbed.data(), e.original.data()) - e.l2) > 1e-9)
      throw FormatError("record " + std::to_string(i) + " distances disagree with its tensors", 0);
  }
  return set;
}

void save_adversarial(const AdversarialSet& set, const std::filesystem::path& path) {
  write_file(path, encode_adversarial(set));
}

AdversarialSet load_adversarial(const std::filesystem::path& path) {
  return decode_adversarial(read_file(path));
}

}  // namespace advdet
