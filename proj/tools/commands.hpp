#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "run_config.hpp"

namespace spgt::cli {

/// Exit codes: 0 success, 1 runtime failure (including a failed gradient
/// check), 2 usage or configuration error.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

struct CommonOptions {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
};

struct PretrainOptions : CommonOptions {
  std::string resume;
  /// Stop after this many epochs in this invocation (0: no limit).
  std::size_t max_epochs = 0;
};

struct FinetuneOptions : CommonOptions {
  std::string task;
  std::string checkpoint;
  std::optional<double> train_fraction;
};

struct ReconstructOptions {
  std::string checkpoint;
  std::string raster;
  std::vector<double> ratios{0.5, 0.75, 0.9, 0.95};
  std::string preset = "all";
  std::string out;
  std::uint64_t seed = 0;
};

struct GradcheckOptions : CommonOptions {
  std::optional<double> eps;
  bool inject_fault = false;
};

struct AblateOptions : CommonOptions {
  std::string axis;
  std::vector<std::string> values;
};

// Each command throws spgt::Error on failure; run_cli maps errors to exit codes.
int cmd_synth(const std::string& spec_path, const std::string& out_dir, std::ostream& log);
int cmd_pretrain(const PretrainOptions& o, bool progressive, std::ostream& log);
int cmd_finetune(const FinetuneOptions& o, std::ostream& log);
int cmd_eval(const FinetuneOptions& o, std::ostream& log);
int cmd_reconstruct(const ReconstructOptions& o, std::ostream& log);
int cmd_gradcheck(const GradcheckOptions& o, std::ostream& log);
int cmd_ablate(const AblateOptions& o, std::ostream& log);

/// Parses argv and dispatches. Errors are printed to `err`.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace spgt::cli
