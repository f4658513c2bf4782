#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "spgt/model.hpp"
#include "spgt/optim.hpp"
#include "spgt/rng.hpp"

namespace spgt {

/// Where training stands: `epoch` is the next epoch to run within `stage`,
/// `step` the number of optimizer steps already taken in that stage.
struct TrainingPosition {
  std::uint64_t stage = 0;
  std::uint64_t epoch = 0;
  std::uint64_t step = 0;
  bool operator==(const TrainingPosition&) const = default;
};

/// Checkpoint file ("SPCK"), little-endian:
///   magic "SPCK", u16 version
///   model config (u64 sizes, f64 reals), metadata (u32-prefixed UTF-8)
///   u32 parameter count, each: name, u32 rank, u64 extents, f32 payload
///   optimizer: f64 beta1 beta2 eps weight_decay clip_norm, u64 step,
///              u32 moment count, then first and second moments as tensors
///   rng: u64 seed, u64 counter
///   position: u64 stage, epoch, step
struct Checkpoint {
  ModelConfig model;
  std::string metadata;
  std::vector<std::pair<std::string, Tensor>> params;
  OptimizerState optimizer;
  Rng::State rng;
  TrainingPosition position;

  const Tensor* find(const std::string& name) const;
};

inline constexpr std::uint16_t kCheckpointVersion = 1;

Checkpoint capture_checkpoint(const ModelConfig& model, const ParameterSet<float>& params,
                              const OptimizerState& opt, Rng::State rng, TrainingPosition pos,
                              std::string metadata = {});

/// Copies checkpoint tensors into `params`. Only entries whose name starts
/// with `prefix` are considered; the prefix is stripped before matching.
/// Every parameter in `params` must be present with an identical shape,
/// otherwise DimensionError names the parameter and both shapes.
void apply_checkpoint(const Checkpoint& ckpt, ParameterSet<float>& params, const std::string& prefix = "");

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes, const std::string& what = "checkpoint");
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Rebuilds a masked autoencoder from a checkpoint (config + weights).
MaskedAutoencoder<float> model_from_checkpoint(const Checkpoint& ckpt);

}  // namespace spgt
