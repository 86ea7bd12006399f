#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "segbench/experiments.hpp"
#include "segbench/losses.hpp"
#include "segbench/models.hpp"
#include "segbench/preprocess.hpp"
#include "segbench/synthdata.hpp"
#include "segbench/training.hpp"

// Run configuration: a JSON document with sections data, preprocess, model,
// train, loss, experiment, downstream and pca. Missing keys take preset
// defaults; unknown keys are rejected.
namespace segbench::config {

struct ExperimentSettings {
  std::string name = "default";
  std::vector<std::uint64_t> seeds = {0, 1, 2};
  std::string arch = "DL";                  // discriminative backbone for SupOnly and SemanticAN
  std::vector<std::string> bias_configs = {"control", "full_bias", "biased_G", "biased_E", "biased_Dl", "biased_Du"};
};

struct PcaSettings {
  int images = 300;
  int components = 3;
  std::uint64_t seed = 2000;
  double scale_min = 0.85;  // scale knob range of the probe dataset
  double scale_max = 1.15;
};

struct RunConfig {
  std::string preset = "desk";
  synth::PartitionConfig data;
  prep::PreprocessConfig preprocess;
  models::ModelConfig model;
  train::TrainConfig train;
  ExperimentSettings experiment;
  exp::DownstreamConfig downstream;
  PcaSettings pca;

  void validate() const;  // throws ConfigError
};

/// "desk" (defaults), "ci" (reduced widths and steps at 32x32) or "paper"
/// (the published step counts, batch sizes and learning rates at 256x256).
RunConfig preset(std::string_view name);
std::vector<std::string> preset_names();

nlohmann::ordered_json to_json(const RunConfig& cfg);
/// Strict: unknown keys and wrongly typed values throw ConfigError naming the key path.
RunConfig from_json(const nlohmann::json& doc);

/// Parses "a.b.c=value". The value is read as JSON when it parses, otherwise
/// as a string. Throws ConfigError on a malformed override.
void apply_override(nlohmann::json& doc, std::string_view assignment);

/// Starts from the preset named in the file (or "desk"), merges the file, then the overrides.
RunConfig load(const std::optional<std::filesystem::path>& path, const std::vector<std::string>& overrides);

std::string config_hash(const RunConfig& cfg);
void write_resolved(const RunConfig& cfg, const std::filesystem::path& path);

}  // namespace segbench::config
