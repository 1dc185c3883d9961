#include "advdet/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>

#include "advdet/error.hpp"
#include "advdet/random.hpp"

namespace advdet {

namespace fs = std::filesystem;

const char* split_name(Split split) {
  switch (split) {
    case Split::kTrain:
      return "train";
    case Split::kVal:
      return "val";
    case Split::kTest:
      return "test";
  }
  return "unknown";
}

Shape LabeledDataset::item_shape() const {
  if (images.rank() == 0) return {};
  return images.row_shape();
}

Tensor LabeledDataset::item(std::size_t i) const { return unstack_one(images, i); }

Tensor LabeledDataset::batch(std::size_t begin, std::size_t count) const {
  return images.rows(begin, count);
}

Tensor LabeledDataset::gather(std::span<const std::size_t> indices) const {
  if (indices.empty()) throw ShapeError("gather: no indices");
  const std::size_t stride = images.row_size();
  Shape s = images.shape();
  s[0] = indices.size();
  std::vector<double> out;
  out.reserve(indices.size() * stride);
  for (auto i : indices) {
    if (i >= size()) throw ShapeError("gather: index " + std::to_string(i) + " out of range");
    auto row = images.data().subspan(i * stride, stride);
    out.insert(out.end(), row.begin(), row.end());
  }
  return Tensor(std::move(s), std::move(out));
}

std::vector<int> LabeledDataset::gather_labels(std::span<const std::size_t> indices) const {
  std::vector<int> out;
  out.reserve(indices.size());
  for (auto i : indices) out.push_back(labels.at(i));
  return out;
}

LabeledDataset LabeledDataset::subset(std::span<const std::size_t> indices) const {
  LabeledDataset d;
  d.class_count = class_count;
  d.split = split;
  if (indices.empty()) return d;
  d.images = gather(indices);
  d.labels = gather_labels(indices);
  return d;
}

LabeledDataset LabeledDataset::head(std::size_t count) const {
  std::vector<std::size_t> idx(std::min(count, size()));
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return subset(idx);
}

void LabeledDataset::validate(bool check_pixel_range) const {
  if (empty()) return;
  if (images.rank() < 2 || images.dim(0) != labels.size()) {
    throw ShapeError("dataset has " + std::to_string(labels.size()) + " labels but images " +
                     shape_str(images.shape()));
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= class_count) {
      throw ConfigError("label " + std::to_string(labels[i]) + " at index " + std::to_string(i) +
                        " outside [0, " + std::to_string(class_count) + ")");
    }
  }
  images.check_finite("dataset images");
  if (check_pixel_range) {
    for (std::size_t i = 0; i < images.size(); ++i) {
      if (images[i] < kPixelMin || images[i] > kPixelMax) {
        throw ConfigError("pixel value " + std::to_string(images[i]) + " at flat index " +
                          std::to_string(i) + " outside [0, 255]");
      }
    }
  }
}

LabeledDataset make_dataset(std::span<const Tensor> items, std::vector<int> labels,
                            std::size_t class_count, Split split) {
  LabeledDataset d;
  d.class_count = class_count;
  d.split = split;
  if (items.size() != labels.size()) {
    throw ShapeError("make_dataset: " + std::to_string(items.size()) + " items, " +
                     std::to_string(labels.size()) + " labels");
  }
  if (!items.empty()) d.images = stack(items);
  d.labels = std::move(labels);
  return d;
}

std::pair<LabeledDataset, LabeledDataset> split_holdout(const LabeledDataset& data,
                                                        double fraction, std::uint64_t seed) {
  if (fraction < 0.0 || fraction > 1.0) throw ConfigError("holdout fraction outside [0, 1]");
  std::vector<std::size_t> idx(data.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  Rng rng(seed);
  rng.shuffle(idx);
  const auto held = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(idx.size())));
  std::vector<std::size_t> rest(idx.begin(), idx.end() - static_cast<std::ptrdiff_t>(held));
  std::vector<std::size_t> out(idx.end() - static_cast<std::ptrdiff_t>(held), idx.end());
  std::sort(rest.begin(), rest.end());
  std::sort(out.begin(), out.end());
  auto a = data.subset(rest);
  auto b = data.subset(out);
  b.split = Split::kVal;
  return {std::move(a), std::move(b)};
}

// ---------------------------------------------------------------------------
// Raw file helpers

std::vector<std::uint8_t> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_file(const fs::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("short write to " + path.string());
}

// ---------------------------------------------------------------------------
// IDX

namespace {

struct IdxHeader {
  std::vector<std::size_t> dims;
  std::size_t payload_offset = 0;
};

IdxHeader parse_idx_header(std::span<const std::uint8_t> b, std::size_t expected_rank,
                           const char* what) {
  if (b.size() < 4) throw FormatError(std::string(what) + ": truncated magic", b.size());
  if (b[0] != 0 || b[1] != 0 || b[2] != 0x08) {
    throw FormatError(std::string(what) + ": bad magic (expected unsigned-byte IDX)", 0);
  }
  const std::size_t rank = b[3];
  if (rank != expected_rank) {
    throw FormatError(std::string(what) + ": expected " + std::to_string(expected_rank) +
                          " dimensions, header declares " + std::to_string(rank),
                      3);
  }
  IdxHeader h;
  std::size_t off = 4;
  for (std::size_t d = 0; d < rank; ++d) {
    if (off + 4 > b.size()) throw FormatError(std::string(what) + ": truncated dimension header", b.size());
    const std::uint32_t v = (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) |
                            (std::uint32_t{b[off + 2]} << 8) | std::uint32_t{b[off + 3]};
    h.dims.push_back(v);
    off += 4;
  }
  h.payload_offset = off;
  std::size_t count = 1;
  for (auto d : h.dims) count *= d;
  if (b.size() < off + count) {
    throw FormatError(std::string(what) + ": truncated payload, header declares " +
                          std::to_string(count) + " bytes",
                      b.size());
  }
  if (b.size() > off + count) {
    throw FormatError(std::string(what) + ": trailing bytes after payload", off + count);
  }
  return h;
}

void put_be32(std::vector<std::uint8_t>& out, std::size_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

std::uint8_t to_byte(double v) {
  const double r = std::round(v);
  if (r < 0.0 || r > 255.0) throw ConfigError("pixel value " + std::to_string(v) + " not storable as a byte");
  return static_cast<std::uint8_t>(r);
}

}  // namespace

LabeledDataset decode_idx(std::span<const std::uint8_t> images,
                          std::span<const std::uint8_t> labels, std::size_t class_count) {
  const auto ih = parse_idx_header(images, 3, "idx images");
  const auto lh = parse_idx_header(labels, 1, "idx labels");
  const std::size_t n = ih.dims[0];
  if (lh.dims[0] != n) {
    throw FormatError("image/label count mismatch: " + std::to_string(n) + " images, " +
                          std::to_string(lh.dims[0]) + " labels",
                      4);
  }
  LabeledDataset d;
  d.class_count = class_count;
  if (n == 0) return d;
  const std::size_t h = ih.dims[1], w = ih.dims[2];
  std::vector<double> px(n * h * w);
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = images[ih.payload_offset + i];
  d.images = Tensor({n, 1, h, w}, std::move(px));
  d.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int y = labels[lh.payload_offset + i];
    if (static_cast<std::size_t>(y) >= class_count) {
      throw FormatError("label " + std::to_string(y) + " outside [0, " +
                            std::to_string(class_count) + ")",
                        lh.payload_offset + i);
    }
    d.labels[i] = y;
  }
  return d;
}

LabeledDataset load_idx(const fs::path& images, const fs::path& labels, std::size_t class_count) {
  return decode_idx(read_file(images), read_file(labels), class_count);
}

LabeledDataset load_idx(const fs::path& images) {
  std::string name = images.filename().string();
  const auto pos = name.find("images-idx3");
  if (pos == std::string::npos) {
    throw ConfigError("cannot derive label file from " + images.string() +
                      "; pass the labels path explicitly");
  }
  name.replace(pos, 11, "labels-idx1");
  return load_idx(images, images.parent_path() / name);
}

std::vector<std::uint8_t> encode_idx_images(const LabeledDataset& data) {
  const Shape item = data.item_shape();
  if (!data.empty() && !(item.size() == 3 && item[0] == 1)) {
    throw ShapeError("idx images must be single-channel, got item shape " + shape_str(item));
  }
  std::vector<std::uint8_t> out{0, 0, 0x08, 3};
  put_be32(out, data.size());
  put_be32(out, data.empty() ? 0 : item[1]);
  put_be32(out, data.empty() ? 0 : item[2]);
  if (!data.empty())
    for (double v : data.images.data()) out.push_back(to_byte(v));
  return out;
}

std::vector<std::uint8_t> encode_idx_labels(const LabeledDataset& data) {
  std::vector<std::uint8_t> out{0, 0, 0x08, 1};
  put_be32(out, data.size());
  for (int y : data.labels) out.push_back(static_cast<std::uint8_t>(y));
  return out;
}

void write_idx(const LabeledDataset& data, const fs::path& images, const fs::path& labels) {
  write_file(images, encode_idx_images(data));
  write_file(labels, encode_idx_labels(data));
}

// ---------------------------------------------------------------------------
// CIFAR-10 binary

namespace {
constexpr std::size_t kCifarPixels = 3 * 32 * 32;
constexpr std::size_t kCifarRecord = kCifarPixels + 1;
}  // namespace

LabeledDataset decode_cifar_binary(std::span<const std::uint8_t> bytes) {
  if (bytes.size() % kCifarRecord != 0) {
    throw FormatError("cifar binary: size " + std::to_string(bytes.size()) +
                          " is not a multiple of the 3073-byte record",
                      bytes.size() - bytes.size() % kCifarRecord);
  }
  const std::size_t n = bytes.size() / kCifarRecord;
  LabeledDataset d;
  d.class_count = 10;
  if (n == 0) return d;
  std::vector<double> px(n * kCifarPixels);
  d.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t off = i * kCifarRecord;
    if (bytes[off] > 9) {
      throw FormatError("cifar binary: label " + std::to_string(bytes[off]) + " outside [0, 9]", off);
    }
    d.labels[i] = bytes[off];
    for (std::size_t p = 0; p < kCifarPixels; ++p) px[i * kCifarPixels + p] = bytes[off + 1 + p];
  }
  d.images = Tensor({n, 3, 32, 32}, std::move(px));
  return d;
}

LabeledDataset load_cifar_binary(const fs::path& path) { return decode_cifar_binary(read_file(path)); }

std::vector<std::uint8_t> encode_cifar_binary(const LabeledDataset& data) {
  if (!data.empty() && data.item_shape() != Shape{3, 32, 32}) {
    throw ShapeError("cifar records need 3x32x32 items, got " + shape_str(data.item_shape()));
  }
  std::vector<std::uint8_t> out;
  out.reserve(data.size() * kCifarRecord);
  for (std::size_t i = 0; i < data.size(); ++i) {
    out.push_back(static_cast<std::uint8_t>(data.labels[i]));
    for (std::size_t p = 0; p < kCifarPixels; ++p)
      out.push_back(to_byte(data.images[i * kCifarPixels + p]));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic blobs

namespace {

// Sum of `bumps` Gaussian bumps per channel with N(0, 1) amplitudes (or random
// signs), centred and scaled to unit per-pixel RMS.
Tensor smooth_field(const Shape& dims, std::size_t bumps, double bump_width, bool signs, Rng& rng) {
  const std::size_t c = dims[0], h = dims[1], w = dims[2];
  Tensor p(dims, 0.0);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t b = 0; b < bumps; ++b) {
      const double cy = rng.uniform(0.0, static_cast<double>(h));
      const double cx = rng.uniform(0.0, static_cast<double>(w));
      const double width = bump_width * rng.uniform(0.7, 1.3);
      const double amp = signs ? (rng.bernoulli(0.5) ? 1.0 : -1.0) : rng.normal();
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          const double dy = static_cast<double>(y) + 0.5 - cy;
          const double dx = static_cast<double>(x) + 0.5 - cx;
          p[(ch * h + y) * w + x] += amp * std::exp(-(dy * dy + dx * dx) / (2.0 * width * width));
        }
    }
  }
  double mean = 0.0;
  for (double v : p.data()) mean += v;
  mean /= static_cast<double>(p.size());
  double rms = 0.0;
  for (auto& v : p.data()) {
    v -= mean;
    rms += v * v;
  }
  rms = std::sqrt(rms / static_cast<double>(p.size()));
  if (rms > 0.0)
    for (auto& v : p.data()) v /= rms;
  return p;
}

}  // namespace

std::vector<Tensor> synth_prototypes(const SynthOptions& o) {
  if (o.dims.size() != 3) throw ConfigError("synth_blobs dims must be (C, H, W)");
  if (o.separation <= 0.0) throw ConfigError("synth_blobs separation must be positive");
  if (o.classes < 2) throw ConfigError("synth_blobs needs at least two classes");
  if (o.modes == 0) throw ConfigError("synth_blobs needs at least one mode per class");
  if (o.noise < 0.0 || o.variation < 0.0) throw ConfigError("synth_blobs noise must be non-negative");
  Rng rng(mix_seed(o.prototype_seed, 0x70726f746fULL));
  std::vector<Tensor> protos;
  for (std::size_t k = 0; k < o.classes * o.modes; ++k) {
    Tensor p = smooth_field(o.dims, o.bumps, o.bump_width, true, rng);
    for (auto& v : p.data()) v = o.base_level + o.separation * v;
    protos.push_back(std::move(p));
  }
  return protos;
}

LabeledDataset synth_blobs(const SynthOptions& o) {
  const auto protos = synth_prototypes(o);
  Rng rng(mix_seed(o.seed, 0x73616d706c65ULL));
  const std::size_t item = shape_numel(o.dims);
  const std::size_t n = o.classes * o.per_class;
  LabeledDataset d;
  d.class_count = o.classes;
  d.split = o.split;
  if (n == 0) return d;
  std::vector<double> px;
  px.reserve(n * item);
  for (std::size_t k = 0; k < o.classes; ++k) {
    for (std::size_t s = 0; s < o.per_class; ++s) {
      const Tensor& proto = protos[k * o.modes + s % o.modes];
      Tensor field;
      if (o.variation > 0.0) field = smooth_field(o.dims, o.bumps, o.bump_width, false, rng);
      for (std::size_t i = 0; i < item; ++i) {
        double v = proto[i] + o.noise * rng.normal();
        if (o.variation > 0.0) v += o.variation * field[i];
        px.push_back(std::clamp(v, kPixelMin, kPixelMax));
      }
      d.labels.push_back(static_cast<int>(k));
    }
  }
  Shape s{n};
  s.insert(s.end(), o.dims.begin(), o.dims.end());
  d.images = Tensor(std::move(s), std::move(px));
  return d;
}

}  // namespace advdet
