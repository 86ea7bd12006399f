#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <torch/torch.h>

#include "json.hpp"

// Single-file checkpoint container. Layout is described in docs/checkpoint_format.md.
namespace segbench::ckpt {

enum class Component { G, D_r, D_m, E, DL, UN, classifier };
std::string_view to_string(Component c);
Component parse_component(std::string_view s);  // throws DataError

struct CheckpointMeta {
  Component component = Component::G;
  std::int64_t step = 0;
  double selection_score = 0.0;
  std::string config_hash;
  nlohmann::json extra = nlohmann::json::object();  // e.g. the model config needed to rebuild the network
};

/// Named parameters followed by named buffers, in registration order.
using TensorList = std::vector<std::pair<std::string, torch::Tensor>>;

TensorList named_state(const torch::nn::Module& m);

/// Deep copy of all parameters and buffers.
TensorList snapshot(const torch::nn::Module& m);
/// Copies a snapshot back into `m`. Names and shapes must match exactly (DataError).
void restore(torch::nn::Module& m, const TensorList& state);

void save(const std::filesystem::path& path, const torch::nn::Module& m, const CheckpointMeta& meta);
void save_tensors(const std::filesystem::path& path, const TensorList& state, const CheckpointMeta& meta);

struct Loaded {
  CheckpointMeta meta;
  TensorList tensors;
};
Loaded load_tensors(const std::filesystem::path& path);
/// Loads into an already constructed module. Throws DataError on a component,
/// name, dtype or shape mismatch.
CheckpointMeta load(const std::filesystem::path& path, torch::nn::Module& m, Component expected);
CheckpointMeta read_meta(const std::filesystem::path& path);

/// 64-bit FNV-1a over names, shapes and raw bytes of all parameters and buffers, as 16 hex digits.
std::string parameter_hash(const torch::nn::Module& m);
std::string fnv1a_hex(std::string_view bytes);

}  // namespace segbench::ckpt
