#pragma once

#include <cstdint>
#include <functional>

#include "spgt/gradcheck.hpp"
#include "spgt/model.hpp"
#include "spgt/objective.hpp"

namespace spgt {

/// End-to-end gradient check of the pretraining loss through
/// decode(encode(.)) in double precision on a random image.
struct ModelGradCheckSpec {
  ModelConfig model = ModelConfig::tiny({4, 4, 2});
  std::size_t height = 16, width = 16, bands = 6;
  double mask_ratio = 0.5;
  ObjectiveConfig objective;
  std::uint64_t seed = 0;
  /// eps 1e-4: at 1e-3 the O(eps^2) truncation term alone exceeds 1e-3
  /// relative error on small-gradient elements of the full network.
  GradCheckOptions check{1e-4};

  void validate() const;
};

/// `tap` (optional) is applied to the reconstruction before the loss; tests
/// use it to splice in an operation with a deliberately wrong backward.
GradCheckReport model_grad_check(const ModelGradCheckSpec& spec,
                                 const std::function<Var<double>(const Var<double>&)>& tap = {});

/// Identity in the forward pass whose backward scales the incoming gradient
/// by `factor`. Only useful to prove that a gradient check can fail.
Var<double> faulty_identity(const Var<double>& x, double factor = 1.5);

}  // namespace spgt
