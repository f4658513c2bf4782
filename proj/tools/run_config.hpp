#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "spgt/downstream.hpp"
#include "spgt/gradsuite.hpp"
#include "spgt/model.hpp"
#include "spgt/objective.hpp"
#include "spgt/optim.hpp"
#include "spgt/synthetic.hpp"
#include "spgt/training.hpp"

namespace spgt::cli {

struct FinetuneSection {
  std::string task;
  std::string manifest;
  /// Optional separate validation manifest; otherwise `manifest` is split.
  std::string val_manifest;
  double train_split = 0.8;
  /// Fine-tuning input size (0: native raster size).
  std::size_t height = 0, width = 0;
  FinetuneConfig cfg;
};

struct GradcheckSection {
  std::size_t height = 16, width = 16, bands = 6;
  double mask_ratio = 0.5;
  double eps = 1e-4;
  std::size_t max_elements = 256;
};

/// Parsed run configuration. Unknown keys anywhere are a ConfigError naming
/// the key path (e.g. "model.embed_dimm").
struct RunConfig {
  std::uint64_t seed = 0;
  std::string out;
  std::string model_preset = "tiny";
  ModelConfig model;
  /// Whether model.max_grid was given; otherwise it is derived from the data.
  bool max_grid_set = false;
  ObjectiveConfig objective;
  OptimizerConfig optimizer;
  double mask_ratio = 0.9;
  std::vector<StageSpec> stages;
  std::optional<FinetuneSection> finetune;
  GradcheckSection gradcheck;
  /// Relative paths resolve against this directory (the config file's).
  std::filesystem::path base_dir;

  std::filesystem::path resolve(const std::string& p) const;
  nlohmann::json to_json() const;
  PretrainConfig pretrain_config() const;
};

RunConfig parse_run_config(const nlohmann::json& doc, const std::filesystem::path& base_dir);
RunConfig load_run_config(const std::filesystem::path& path);

/// Synthetic dataset spec document: SyntheticSpec fields plus "task".
struct SynthDocument {
  SyntheticSpec spec;
  TaskType task = TaskType::pretrain;
  nlohmann::json to_json() const;
};

SynthDocument parse_synth_spec(const nlohmann::json& doc);

nlohmann::json model_to_json(const ModelConfig& m);
/// Parses a (possibly partial) model object over `base`.
ModelConfig model_from_json(const nlohmann::json& j, ModelConfig base, const std::string& path = "model");

nlohmann::json read_json_file(const std::filesystem::path& path);
/// Writes pretty-printed JSON followed by a newline.
void write_json_file(const std::filesystem::path& path, const nlohmann::json& j);

}  // namespace spgt::cli
