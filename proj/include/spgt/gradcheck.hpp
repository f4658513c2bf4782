#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "spgt/autograd.hpp"

namespace spgt {

struct GradCheckOptions {
  /// Central-difference step; must lie in [1e-4, 1e-2].
  double eps = 1e-3;
  /// Elements checked per parameter; parameters with more elements are
  /// subsampled with a seeded draw. Never below 64.
  std::size_t max_elements_per_param = 256;
  std::uint64_t seed = 0;
};

struct GradCheckEntry {
  std::string param;
  double max_rel_error = 0;
  std::size_t worst_index = 0;
  double analytic = 0;
  double numeric = 0;
  std::size_t checked = 0;
};

struct GradCheckReport {
  double max_rel_error = 0;
  std::string worst_param;
  std::vector<GradCheckEntry> per_param;
};

/// Compares the reverse-mode gradient of `loss` with central differences
/// (f(x+e) - f(x-e)) / 2e for every checked element. Relative error uses the
/// denominator max(|analytic|, |numeric|, 1e-6). `loss` must be deterministic
/// and differentiable at the current point (e.g. |w| at w = 0 is not).
/// Throws EvaluationError on a non-finite loss, ConfigError on a bad eps.
template <typename T>
GradCheckReport grad_check(const std::function<Var<T>()>& loss, ParameterSet<T>& params,
                           const GradCheckOptions& opts = {});

}  // namespace spgt
