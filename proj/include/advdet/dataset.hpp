#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "advdet/tensor.hpp"

namespace advdet {

enum class Split { kTrain, kVal, kTest };
const char* split_name(Split split);

inline constexpr double kPixelMin = 0.0;
inline constexpr double kPixelMax = 255.0;

/// Images stacked along a leading batch axis, with integer class labels.
struct LabeledDataset {
  Tensor images;  // (N, item shape...); placeholder when N == 0
  std::vector<int> labels;
  std::size_t class_count = 0;
  Split split = Split::kTrain;

  std::size_t size() const { return labels.size(); }
  bool empty() const { return labels.empty(); }
  Shape item_shape() const;
  Tensor item(std::size_t i) const;
  // Rows [begin, begin + count) as a batch tensor.
  Tensor batch(std::size_t begin, std::size_t count) const;
  Tensor gather(std::span<const std::size_t> indices) const;
  std::vector<int> gather_labels(std::span<const std::size_t> indices) const;
  LabeledDataset subset(std::span<const std::size_t> indices) const;
  LabeledDataset head(std::size_t count) const;

  // Checks label range, image count, and optionally the pixel range.
  void validate(bool check_pixel_range = true) const;

  friend bool operator==(const LabeledDataset&, const LabeledDataset&) = default;
};

// Builds a dataset from a list of equally shaped items.
LabeledDataset make_dataset(std::span<const Tensor> items, std::vector<int> labels,
                            std::size_t class_count, Split split = Split::kTrain);

// Shuffled split into (remaining, held_out) with round(fraction * N) held out.
std::pair<LabeledDataset, LabeledDataset> split_holdout(const LabeledDataset& data,
                                                        double fraction, std::uint64_t seed);

// IDX (big-endian, unsigned-byte payload). Images (N, H, W) load as (N, 1, H, W)
// with pixel values widened to [0, 255].
LabeledDataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                        std::size_t class_count = 10);
// Derives the label file name from an "...-images-idx3-ubyte" path.
LabeledDataset load_idx(const std::filesystem::path& images);
// Writes both files; pixels are rounded and must lie in [0, 255].
void write_idx(const LabeledDataset& data, const std::filesystem::path& images,
               const std::filesystem::path& labels);
std::vector<std::uint8_t> encode_idx_images(const LabeledDataset& data);
std::vector<std::uint8_t> encode_idx_labels(const LabeledDataset& data);
LabeledDataset decode_idx(std::span<const std::uint8_t> images,
                          std::span<const std::uint8_t> labels, std::size_t class_count = 10);

// CIFAR-10 binary batches: 3073-byte records (label byte + 3x32x32 pixels).
LabeledDataset load_cifar_binary(const std::filesystem::path& path);
LabeledDataset decode_cifar_binary(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_cifar_binary(const LabeledDataset& data);

struct SynthOptions {
  std::size_t classes = 10;
  std::size_t per_class = 100;
  Shape dims{1, 16, 16};
  // Per-pixel RMS amplitude of each class prototype around the base level.
  double separation = 20.0;
  // Per-pixel Gaussian noise standard deviation.
  double noise = 10.0;
  // Per-pixel RMS of a smooth random field (bumps of bump_width) added to
  // every sample on top of its prototype.
  double variation = 0.0;
  double base_level = 128.0;
  // Smooth bumps composing each prototype, and their width in pixels.
  std::size_t bumps = 6;
  double bump_width = 2.5;
  // Prototypes per class; sample s of a class uses prototype s % modes.
  std::size_t modes = 1;
  std::uint64_t seed = 0;
  Split split = Split::kTrain;
  // Draw prototypes from this seed (shared between train/test splits); the
  // per-sample noise comes from `seed`.
  std::uint64_t prototype_seed = 0;
};

/// Gaussian class clusters rendered as small images. Each class owns a smooth
/// prototype image; samples add a smooth random field, i.i.d. pixel noise and
/// clip to [0, 255].
/// Examples are ordered class-major and are identical for identical options.
LabeledDataset synth_blobs(const SynthOptions& options);
// The prototypes synth_blobs uses for `options`, class-major (classes * modes).
std::vector<Tensor> synth_prototypes(const SynthOptions& options);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace advdet
