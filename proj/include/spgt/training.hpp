#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "spgt/checkpoint.hpp"
#include "spgt/model.hpp"
#include "spgt/objective.hpp"
#include "spgt/optim.hpp"

namespace spgt {

/// One stage of (progressive) pretraining.
struct StageSpec {
  std::string name;
  /// Dataset manifest; only used by callers that load data from disk.
  std::string manifest;
  std::size_t height = 0, width = 0;
  std::size_t epochs = 1;
  std::size_t batch_size = 8;
  double base_lr = 1e-3;
  double min_lr = 0.0;
  /// Warmup as a fraction of the stage's optimizer steps.
  double warmup_fraction = 0.1;
};

struct PretrainConfig {
  ObjectiveConfig objective;
  OptimizerConfig optimizer;
  double mask_ratio = 0.9;
  std::uint64_t seed = 0;
};

struct StepRecord {
  std::size_t stage = 0;
  std::size_t step = 0;
  double lr = 0;
  LossBreakdown loss;
};

struct EpochRecord {
  std::size_t stage = 0;
  std::size_t epoch = 0;
  std::size_t steps = 0;
  double lr = 0;  // learning rate of the last step
  LossBreakdown mean;

  /// Single-line JSON record.
  std::string to_json() const;
};

struct StageReport {
  std::vector<EpochRecord> epochs;
  std::vector<StepRecord> steps;
  /// false when a hook stopped the stage early.
  bool completed = true;
};

/// Everything pretraining needs from a stage's data: images already
/// normalized and sized to the stage, plus band statistics for the
/// standardized target mode.
struct StageData {
  std::vector<SpectralImage> images;
  std::optional<BandStandardization> bands;
};

class Pretrainer {
 public:
  Pretrainer(MaskedAutoencoder<float>& model, PretrainConfig cfg);

  /// Trains one stage from `from` (epoch/step within the stage). Per step:
  /// batch of images from a seeded per-epoch permutation (last partial batch
  /// dropped), mask per image from a stream keyed by (stage, step, slot),
  /// total loss averaged over the batch, backward, AdamW at lr_at(step).
  /// Throws EvaluationError naming the step on a non-finite loss.
  StageReport run_stage(const StageSpec& stage, const StageData& data, std::size_t stage_index,
                        TrainingPosition from = {});

  /// Called after every epoch with the position to resume from; returning
  /// false stops the stage.
  std::function<bool(const EpochRecord&, const TrainingPosition&)> on_epoch_end;
  /// Called after every optimizer step.
  std::function<void(const StepRecord&)> on_step;

  OptimizerState& optimizer() { return opt_; }
  const PretrainConfig& config() const { return cfg_; }
  MaskedAutoencoder<float>& model() { return model_; }
  Checkpoint checkpoint(TrainingPosition pos, std::string metadata = {}) const;

 private:
  MaskedAutoencoder<float>& model_;
  PretrainConfig cfg_;
  OptimizerState opt_;
};

/// Steps per epoch with the last partial batch dropped (at least one batch
/// is required).
std::size_t steps_per_epoch(std::size_t samples, std::size_t batch_size);
Schedule stage_schedule(const StageSpec& stage, std::size_t samples);

/// Mean loss over the images with deterministic masks keyed by `seed`, no
/// gradient recording.
LossBreakdown evaluate_loss(const MaskedAutoencoder<float>& model, const std::vector<SpectralImage>& images,
                            const ObjectiveConfig& objective, double mask_ratio, std::uint64_t seed,
                            const std::optional<BandStandardization>& bands = std::nullopt);

struct ProgressivePlan {
  std::vector<StageSpec> stages;
};

struct ProgressiveResult {
  std::vector<StageReport> stages;
  Checkpoint final_checkpoint;
  bool completed = true;
};

/// Runs stages in order. At each stage boundary the spatial positional
/// tables are resampled to the stage grid and optimizer moments are reset;
/// weights carry over. `load` supplies each stage's data. With `resume`
/// the model weights, optimizer state and position come from the checkpoint.
ProgressiveResult progressive_pretrain(const ProgressivePlan& plan, MaskedAutoencoder<float>& model,
                                       const PretrainConfig& cfg,
                                       const std::function<StageData(const StageSpec&, std::size_t)>& load,
                                       const std::optional<Checkpoint>& resume = std::nullopt,
                                       const std::function<bool(const EpochRecord&, const Checkpoint&)>& on_epoch =
                                           {});

}  // namespace spgt
