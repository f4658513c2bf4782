#include "spgt/gradsuite.hpp"

#include "spgt/error.hpp"
#include "spgt/rng.hpp"
#include "spgt/tokenizer.hpp"

namespace spgt {

void ModelGradCheckSpec::validate() const {
  model.validate();
  objective.validate();
  if (model.drop_path != 0.0) throw ConfigError("gradcheck: drop_path must be 0 (the loss must be deterministic)");
  const GridDims g = grid_dims_for(height, width, bands, model.p, model.k);
  if (g.gh > model.max_grid.gh || g.gw > model.max_grid.gw || g.gs != model.max_grid.gs)
    throw ConfigError("gradcheck: input grid exceeds the model's positional tables");
  masked_count_for(g.total(), mask_ratio);
}

Var<double> faulty_identity(const Var<double>& x, double factor) {
  auto xn = x.node();
  return make_result<double>(x.value(), {x}, [xn, factor](Node<double>& self) {
    auto& g = xn->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * self.grad[i];
  });
}

GradCheckReport model_grad_check(const ModelGradCheckSpec& spec,
                                 const std::function<Var<double>(const Var<double>&)>& tap) {
  spec.validate();
  Rng data_rng = Rng::derive(spec.seed, {0x696d67});
  SpectralImage img = SpectralImage::zeros(spec.height, spec.width, spec.bands);
  for (float& v : img.values.data()) v = float(data_rng.uniform());
  const TokenGrid grid = patchify(img, spec.model.p, spec.model.k);
  const ReconTargets tg = make_targets(grid, spec.objective.target_mode, spec.objective.target_eps);
  const TensorT<double> tokens = grid.tokens.cast<double>();
  const TensorT<double> targets = tg.values.cast<double>();
  Rng mask_rng = Rng::derive(spec.seed, {0x6d61736b});
  const MaskPlan plan = build_mask(grid.dims, spec.mask_ratio, mask_rng);

  MaskedAutoencoder<double> model(spec.model, spec.seed);
  auto params = model.parameters();
  auto loss = [&]() {
    Var<double> recon = model.reconstruct(tokens, plan, grid.dims);
    if (tap) recon = tap(recon);
    return total_loss(recon, targets, plan, grid.dims, spec.objective).total;
  };
  return grad_check<double>(loss, params, spec.check);
}

}  // namespace spgt
