#include "spgt/objective.hpp"

#include <cmath>

#include "spgt/ops.hpp"

namespace spgt {

std::string to_string(TokenLossScope s) {
  return s == TokenLossScope::masked_only ? "masked_only" : "all_tokens";
}

TokenLossScope parse_token_scope(const std::string& s) {
  if (s == "masked_only") return TokenLossScope::masked_only;
  if (s == "all_tokens") return TokenLossScope::all_tokens;
  throw ConfigError("unknown token loss scope '" + s + "'");
}

void ObjectiveConfig::validate() const {
  if (!std::isfinite(lambda) || lambda < 0)
    throw ConfigError("objective.lambda must be finite and non-negative, got " + std::to_string(lambda));
  if (target_mode != ReconTargetMode::raw && !(target_eps > 0))
    throw ConfigError("objective.target_eps must be positive");
}

template <typename T>
LossBreakdown LossTerms<T>::breakdown() const {
  return {double(token.item()), double(spectral.item()), lambda, double(total.item())};
}

namespace {

template <typename T>
void check_aligned(const Var<T>& recon, const TensorT<T>& targets, const char* what) {
  if (recon.shape() != targets.shape())
    throw DimensionError(std::string(what) + ": reconstruction " + shape_str(recon.shape()) + " vs targets " +
                         shape_str(targets.shape()));
}

}  // namespace

template <typename T>
Var<T> token_loss(const Var<T>& recon, const TensorT<T>& targets, const MaskPlan& plan, TokenLossScope scope) {
  check_aligned(recon, targets, "token_loss");
  if (recon.value().rows() != plan.total)
    throw DimensionError("token_loss: " + std::to_string(recon.value().rows()) + " rows for a plan of " +
                         std::to_string(plan.total) + " tokens");
  if (scope == TokenLossScope::all_tokens) return ops::mse(recon, targets);
  if (plan.masked.empty()) return ops::scale(ops::sum_all(recon), T(0));
  const std::size_t len = targets.cols();
  TensorT<T> picked({plan.masked.size(), len});
  for (std::size_t i = 0; i < plan.masked.size(); ++i)
    std::copy_n(&targets[plan.masked[i] * len], len, &picked[i * len]);
  return ops::mse(ops::gather_rows(recon, plan.masked), picked);
}

template <typename T>
Var<T> spectral_loss(const Var<T>& recon, const TensorT<T>& targets, const GridDims& grid) {
  check_aligned(recon, targets, "spectral_loss");
  if (recon.value().rows() != grid.total())
    throw DimensionError("spectral_loss: reconstruction must cover all " + std::to_string(grid.total()) + " tokens");
  // Tokens are ordered (r, c, s) with s fastest, so the gs tokens of a site
  // are consecutive rows and a reshape yields the spectral-site rows.
  const Shape site_shape{grid.sites(), grid.gs * targets.cols()};
  return ops::mse(ops::reshape(recon, site_shape), targets.reshaped(site_shape));
}

template <typename T>
LossTerms<T> total_loss(const Var<T>& recon, const TensorT<T>& targets, const MaskPlan& plan,
                        const GridDims& grid, const ObjectiveConfig& cfg) {
  cfg.validate();
  LossTerms<T> terms;
  terms.lambda = cfg.lambda;
  terms.token = token_loss(recon, targets, plan, cfg.token_scope);
  terms.spectral = spectral_loss(recon, targets, grid);
  terms.total = ops::add(terms.token, ops::scale(terms.spectral, static_cast<T>(cfg.lambda)));
  return terms;
}

template struct LossTerms<float>;
template struct LossTerms<double>;
template Var<float> token_loss(const Var<float>&, const TensorT<float>&, const MaskPlan&, TokenLossScope);
template Var<double> token_loss(const Var<double>&, const TensorT<double>&, const MaskPlan&, TokenLossScope);
template Var<float> spectral_loss(const Var<float>&, const TensorT<float>&, const GridDims&);
template Var<double> spectral_loss(const Var<double>&, const TensorT<double>&, const GridDims&);
template LossTerms<float> total_loss(const Var<float>&, const TensorT<float>&, const MaskPlan&, const GridDims&,
                                     const ObjectiveConfig&);
template LossTerms<double> total_loss(const Var<double>&, const TensorT<double>&, const MaskPlan&, const GridDims&,
                                      const ObjectiveConfig&);

}  // namespace spgt
