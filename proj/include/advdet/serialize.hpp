#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "advdet/attacks.hpp"
#include "advdet/detection.hpp"
#include "advdet/models.hpp"

namespace advdet {

// Binary containers, all sharing one layout:
//   8-byte magic | u32 version | u64 header length | JSON header |
//   payload | u64 FNV-1a checksum of every preceding byte
// Integers and float64 values are little-endian. See docs/formats.md.
inline constexpr std::uint32_t kContainerVersion = 1;

std::vector<std::uint8_t> encode_model(const TrainedModel& model);
TrainedModel decode_model(std::span<const std::uint8_t> bytes);
void save_model(const TrainedModel& model, const std::filesystem::path& path);
TrainedModel load_model(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_bundle(const DetectorBundle& bundle);
DetectorBundle decode_bundle(std::span<const std::uint8_t> bytes);
void save_bundle(const DetectorBundle& bundle, const std::filesystem::path& path);
DetectorBundle load_bundle(const std::filesystem::path& path);

struct AdversarialSet {
  AttackConfig attack;
  std::vector<AdversarialExample> examples;
  friend bool operator==(const AdversarialSet&, const AdversarialSet&) = default;
};

std::vector<std::uint8_t> encode_adversarial(const AdversarialSet& set);
// Stored distances are checked against the tensors (to 1e-9).
AdversarialSet decode_adversarial(std::span<const std::uint8_t> bytes);
void save_adversarial(const AdversarialSet& set, const std::filesystem::path& path);
AdversarialSet load_adversarial(const std::filesystem::path& path);

std::uint64_t fnv1a(std::span<const std::uint8_t> bytes);

}  // namespace advdet
