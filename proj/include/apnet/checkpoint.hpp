#pragma once

// ".apnt" checkpoints: "APNT", u32 version, u32-length JSON header, then
// named tensors (u32 name length, name bytes, u32 rank, u32 dims, f32 data),
// all little-endian.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "apnet/losses.hpp"
#include "apnet/model.hpp"
#include "apnet/trainer.hpp"

namespace apnet::io {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  nn::ApnetConfig config;
  nn::ModelWeights<float> weights;
  std::optional<train::OptimizerState> optimizer;
  std::optional<train::TrainConfig> train_config;
  std::optional<loss::LossWeights> loss_weights;
  std::int64_t step = 0;
  std::int64_t epoch = 0;
  std::string rng_state;  // textual std::mt19937_64 state, empty if none
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
/// Throws Format on bad magic/version, truncation, missing or extra tensors, or shape mismatch.
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::string config_to_json(const nn::ApnetConfig& cfg);
nn::ApnetConfig config_from_json(const std::string& text);

/// Dotted names of the fields that differ ("stft.frame_shift", "asp.channels", ...).
std::vector<std::string> config_differences(const nn::ApnetConfig& a, const nn::ApnetConfig& b);

}  // namespace apnet::io
