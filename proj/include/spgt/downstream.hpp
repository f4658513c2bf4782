#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "spgt/checkpoint.hpp"
#include "spgt/data.hpp"
#include "spgt/metrics.hpp"
#include "spgt/model.hpp"
#include "spgt/optim.hpp"

namespace spgt {

/// Mean pool over tokens, then Linear -> GELU -> Linear to class logits [1 x C].
template <typename T>
struct ClassifierHead {
  Linear<T> fc1, fc2;

  ClassifierHead() = default;
  ClassifierHead(std::size_t dim, std::size_t hidden, std::size_t classes, Rng& rng);
  Var<T> operator()(const Var<T>& encoded) const;
  void collect(ParameterSet<T>& set, const std::string& prefix);
};

/// Merges the gs spectral-group tokens of each spatial site:
/// [N x d] -> reshape [sites x gs*d] -> Linear -> [sites x d].
template <typename T>
struct SiteFuse {
  Linear<T> fuse;
  std::size_t gs = 0;

  SiteFuse() = default;
  SiteFuse(std::size_t dim, std::size_t gs, Rng& rng);
  Var<T> operator()(const Var<T>& encoded, const GridDims& grid) const;
  void collect(ParameterSet<T>& set, const std::string& prefix);
};

/// Site map [gh*gw x d] to pixel logits [H*W x classes]: two stages of
/// (nearest x2, 3x3 conv, GELU), a further nearest upsample when p > 4, and
/// a 1x1 conv. Requires p to be a multiple of 4.
template <typename T>
struct PixelDecoder {
  Linear<T> conv1, conv2, out;
  std::size_t p = 4;

  PixelDecoder() = default;
  PixelDecoder(std::size_t dim, std::size_t channels, std::size_t classes, std::size_t p, Rng& rng);
  Var<T> operator()(const Var<T>& sites, std::size_t gh, std::size_t gw) const;
  void collect(ParameterSet<T>& set, const std::string& prefix);
};

template <typename T>
struct SegmentationHead {
  SiteFuse<T> fuse;
  PixelDecoder<T> decode;

  SegmentationHead() = default;
  SegmentationHead(std::size_t dim, std::size_t gs, std::size_t channels, std::size_t classes, std::size_t p,
                   Rng& rng);
  /// Pixel logits [H*W x classes].
  Var<T> operator()(const Var<T>& encoded, const GridDims& grid) const;
  void collect(ParameterSet<T>& set, const std::string& prefix);
};

/// Shared-encoder change head: |fuse(a) - fuse(b)| (or the signed
/// difference), decoded to per-pixel log-probabilities over {unchanged, changed}.
template <typename T>
struct ChangeHead {
  SiteFuse<T> fuse;
  PixelDecoder<T> decode;
  bool signed_difference = false;

  ChangeHead() = default;
  ChangeHead(std::size_t dim, std::size_t gs, std::size_t channels, std::size_t p, bool signed_difference, Rng& rng);
  Var<T> feature(const Var<T>& encoded_a, const Var<T>& encoded_b, const GridDims& grid) const;
  /// Log-probabilities [H*W x 2].
  Var<T> operator()(const Var<T>& encoded_a, const Var<T>& encoded_b, const GridDims& grid) const;
  void collect(ParameterSet<T>& set, const std::string& prefix);
};

struct FinetuneConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 8;
  double base_lr = 1e-3;
  double min_lr = 0.0;
  double warmup_fraction = 0.1;
  OptimizerConfig optimizer;
  std::size_t head_hidden = 32;
  std::size_t decoder_channels = 16;
  /// Train only the head; the encoder acts as a fixed feature extractor.
  bool freeze_encoder = false;
  bool signed_difference = false;
  /// Seeded floor-fraction subset of the training split (all tasks).
  double train_fraction = 1.0;
  /// Square crop side for segmentation (0: whole image); crops overlap by 50%.
  std::size_t crop = 0;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Encoder plus one task head. Parameter names: "encoder.*", "head.*".
struct TaskModel {
  TaskType task = TaskType::classify;
  std::size_t classes = 0;
  Encoder<float> encoder;
  ClassifierHead<float> classifier;     // classify, multilabel
  SegmentationHead<float> segmenter;    // segment
  ChangeHead<float> change;             // change
  FinetuneConfig cfg;

  ParameterSet<float> parameters(bool include_encoder = true);
  /// Head settings (task, classes, sizes) as a JSON object string, stored
  /// in checkpoint metadata.
  std::string describe() const;
};

/// Builds a head for `task` on a copy of `encoder`, with positional tables
/// resampled to the fine-tuning grid (input_h x input_w).
TaskModel make_task_model(TaskType task, const Encoder<float>& encoder, std::size_t classes,
                          std::size_t input_h, std::size_t input_w, const FinetuneConfig& cfg);
/// Recreates a fine-tuned model from a checkpoint written with
/// capture_checkpoint(..., model.describe()).
TaskModel task_model_from_checkpoint(const Checkpoint& ckpt);

// Training; each returns the held-out report.
MetricsReport finetune_classify(TaskModel& m, const std::vector<ClassifySample>& train,
                                const std::vector<ClassifySample>& val);
MetricsReport finetune_multilabel(TaskModel& m, const std::vector<MultiLabelSample>& train,
                                  const std::vector<MultiLabelSample>& val);
MetricsReport finetune_segment(TaskModel& m, const std::vector<SegmentSample>& train,
                               const std::vector<SegmentSample>& val);
MetricsReport finetune_change(TaskModel& m, const std::vector<ChangeSample>& train,
                              const std::vector<ChangeSample>& val);

// Pure evaluation (weights untouched), parallel over samples.
MetricsReport evaluate_classify(const TaskModel& m, const std::vector<ClassifySample>& data);
MetricsReport evaluate_multilabel(const TaskModel& m, const std::vector<MultiLabelSample>& data);
MetricsReport evaluate_segment(const TaskModel& m, const std::vector<SegmentSample>& data);
MetricsReport evaluate_change(const TaskModel& m, const std::vector<ChangeSample>& data);

/// Class logits for one image.
std::vector<float> classify_logits(const TaskModel& m, const SpectralImage& img);
/// Per-pixel class logits [H*W x C], stitched from 50%-overlap crops by
/// averaging logits.
Tensor segment_logits(const TaskModel& m, const SpectralImage& img);
/// Per-pixel log-probabilities [H*W x 2].
Tensor change_logprobs(const TaskModel& m, const SpectralImage& a, const SpectralImage& b);

/// Crop origins along one axis: stride side/2, last crop flush with the edge.
std::vector<std::size_t> crop_origins(std::size_t extent, std::size_t side);
SpectralImage crop(const SpectralImage& img, std::size_t y, std::size_t x, std::size_t h, std::size_t w);

/// Worker count from SPGT_THREADS (default: hardware concurrency, at least 1).
std::size_t worker_threads();
/// Runs fn(i) for i in [0, n) on up to worker_threads() threads.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace spgt
