#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "advdet/evaluation.hpp"

namespace advdet {

// Fixed CSV headers (see docs/formats.md). Missing values are empty fields.
inline constexpr const char* kEvalHeader =
    "adversary,epsilon,sigma,accuracy,detectability,n_original,n_adversarial,n_degenerate,seed";
inline constexpr const char* kTransferHeader = "row_label,row,col_label,col,detectability";
inline constexpr const char* kDepthHeader = "adversary,ad_index,detectability";

// Shortest decimal text that parses back to the same double.
std::string format_number(double v);

std::string eval_reports_csv(const std::vector<EvalReport>& reports);
std::vector<EvalReport> parse_eval_reports(const std::string& csv);
void write_report(const std::filesystem::path& path, const std::vector<EvalReport>& reports);
std::vector<EvalReport> read_eval_reports(const std::filesystem::path& path);

std::string transfer_csv(const TransferMatrix& m);
TransferMatrix parse_transfer(const std::string& csv);
void write_report(const std::filesystem::path& path, const TransferMatrix& m);
TransferMatrix read_transfer(const std::filesystem::path& path);

std::string depth_csv(const std::vector<DepthCell>& cells);
std::vector<DepthCell> parse_depth(const std::string& csv);
void write_report(const std::filesystem::path& path, const std::vector<DepthCell>& cells);
std::vector<DepthCell> read_depth(const std::filesystem::path& path);

// Build identification baked in at configure time.
const char* git_describe();

// Writes `manifest` (pretty-printed, sorted keys) after adding "git_describe".
void write_manifest(const std::filesystem::path& path, nlohmann::json manifest);
nlohmann::json read_manifest(const std::filesystem::path& path);

std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace advdet
