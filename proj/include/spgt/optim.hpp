#pragma once

#include <cstdint>
#include <vector>

#include "spgt/autograd.hpp"

namespace spgt {

struct OptimizerConfig {
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.05;
  /// Global-norm gradient clipping; 0 disables it.
  double clip_norm = 0.0;
};

struct OptimizerState {
  OptimizerConfig cfg;
  std::uint64_t step = 0;
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;

  /// Zeroes moments and the step counter (used at progressive stage boundaries).
  void reset();
};

/// AdamW with bias correction and decoupled weight decay:
///   w <- w (1 - lr wd) - lr m_hat / (sqrt(v_hat) + eps)
/// Decay only applies to entries flagged `decay`. Gradients are zeroed after
/// the step. Throws EvaluationError naming the parameter on a non-finite
/// gradient (before anything is modified).
void adamw_step(ParameterSet<float>& params, OptimizerState& state, double lr);

/// Scales all gradients so their global L2 norm is at most max_norm; returns
/// the norm before clipping.
double clip_grad_norm(ParameterSet<float>& params, double max_norm);

struct Schedule {
  std::size_t warmup_steps = 0;
  std::size_t total_steps = 1;
  double base_lr = 1e-4;
  double min_lr = 0.0;
};

/// Linear warmup from 0 to base_lr, then half-cycle cosine decay to min_lr
/// at total_steps. Throws ConfigError for step > total_steps.
double lr_at(const Schedule& s, std::size_t step);

}  // namespace spgt
