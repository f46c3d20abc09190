#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>

#include "json.hpp"

#include "dcebad/model.hpp"
#include "dcebad/train.hpp"

namespace dcebad::cli {

/// Everything a run needs, resolved from built-in defaults, then an optional
/// config file, then command-line flags.
struct RunConfig {
  /// Architecture; vocab_size and num_classes are filled from the data at run time.
  zoo::ModelConfig model;
  std::size_t encoder_blocks = 2;
  std::size_t encoder_heads = 12;
  train::TrainConfig train;
  std::uint64_t seed = 1;

  std::string data;
  std::optional<std::string> val_data;
  std::optional<std::string> test_data;
  std::optional<std::string> embeddings;
  std::array<unsigned, 3> split_ratios = {18, 1, 1};
  std::size_t min_freq = 1;
  std::string out = "run";

  /// Model configuration for `variant` with encoder fields set only where used.
  zoo::ModelConfig model_for(zoo::Variant variant, std::size_t vocab_size,
                             std::size_t num_classes) const;
  /// Training settings with the shared seed applied.
  train::TrainConfig train_config() const;

  bool operator==(const RunConfig&) const = default;
};

nlohmann::ordered_json to_json(const RunConfig& config);
/// Overlays the keys present in `j` onto `base`. Unknown keys are rejected.
RunConfig overlay(const RunConfig& base, const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path, const RunConfig& base = {});

nlohmann::ordered_json model_config_to_json(const zoo::ModelConfig& config);
zoo::ModelConfig model_config_from_json(const nlohmann::json& j);

/// Writes `contents` to `path` through a temporary file and a rename.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);
std::string read_file(const std::filesystem::path& path);

/// 64-bit FNV-1a, rendered as 16 hex digits.
std::string fnv1a_hex(const std::string& bytes);

}  // namespace dcebad::cli
