#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "advdet/config.hpp"

namespace advdet {

// Command-specific switches that are not part of RunConfig.
struct CommandOptions {
  bool dynamic = false;               // train-detector
  std::string transfer = "both";      // transfer: epsilon | adversary | both
  std::string split = "test";         // gen-adv: train | test

  friend bool operator==(const CommandOptions&, const CommandOptions&) = default;
};

nlohmann::json to_json(const CommandOptions& o);
CommandOptions command_options_from_json(const nlohmann::json& j);

// train-classifier, gen-adv, train-detector, eval, transfer, depth-sweep,
// dynamic-eval.
const std::vector<std::string>& command_names();

/// Runs one pipeline command, writing its artifacts and manifest.json into
/// `out` (created if needed). Returns the manifest, which holds the full
/// config, the options, every derived seed, input and output checksums, and
/// the build's git description.
nlohmann::json run_command(const std::string& command, const RunConfig& cfg,
                           const std::filesystem::path& out, const CommandOptions& options = {});

// Re-executes the command recorded in a manifest into `out`.
nlohmann::json rerun_manifest(const nlohmann::json& manifest, const std::filesystem::path& out);

// Hex FNV-1a of a file's bytes.
std::string file_checksum(const std::filesystem::path& path);

}  // namespace advdet
