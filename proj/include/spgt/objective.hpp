#pragma once

#include <string>

#include "spgt/autograd.hpp"
#include "spgt/tokenizer.hpp"

namespace spgt {

enum class TokenLossScope { masked_only, all_tokens };

std::string to_string(TokenLossScope s);
TokenLossScope parse_token_scope(const std::string& s);

struct ObjectiveConfig {
  /// Weight of the spectral-sequence term.
  double lambda = 1.0;
  TokenLossScope token_scope = TokenLossScope::all_tokens;
  ReconTargetMode target_mode = ReconTargetMode::per_token_normalized;
  float target_eps = 1e-6f;

  void validate() const;
};

struct LossBreakdown {
  double token = 0;
  double spectral = 0;
  double lambda = 0;
  double total = 0;
};

template <typename T>
struct LossTerms {
  Var<T> token;
  Var<T> spectral;
  Var<T> total;
  double lambda = 0;

  LossBreakdown breakdown() const;
};

/// Elementwise MSE over the rows selected by `scope` (masked rows only, or
/// all N rows). A masked_only loss over a plan without masked tokens is 0.
template <typename T>
Var<T> token_loss(const Var<T>& recon, const TensorT<T>& targets, const MaskPlan& plan, TokenLossScope scope);

/// Elementwise MSE between spectral-site rows of `recon` and `targets`: each
/// row concatenates the gs tokens of one spatial site in spectral order.
template <typename T>
Var<T> spectral_loss(const Var<T>& recon, const TensorT<T>& targets, const GridDims& grid);

/// token + lambda * spectral.
template <typename T>
LossTerms<T> total_loss(const Var<T>& recon, const TensorT<T>& targets, const MaskPlan& plan,
                        const GridDims& grid, const ObjectiveConfig& cfg);

}  // namespace spgt
