#include "spgt/optim.hpp"

#include <cmath>
#include <numbers>

namespace spgt {

void OptimizerState::reset() {
  step = 0;
  first_moment.clear();
  second_moment.clear();
}

void adamw_step(ParameterSet<float>& params, OptimizerState& state, double lr) {
  for (const auto& e : params)
    if (!e.param->grad.all_finite()) throw EvaluationError("non-finite gradient in parameter " + e.name);

  if (state.first_moment.size() != params.size()) {
    state.first_moment.clear();
    state.second_moment.clear();
    for (const auto& e : params) {
      state.first_moment.emplace_back(e.param->value.shape());
      state.second_moment.emplace_back(e.param->value.shape());
    }
  }
  if (state.cfg.clip_norm > 0) clip_grad_norm(params, state.cfg.clip_norm);

  const auto& c = state.cfg;
  const std::uint64_t t = ++state.step;
  const double bc1 = 1.0 - std::pow(c.beta1, double(t));
  const double bc2 = 1.0 - std::pow(c.beta2, double(t));
  std::size_t idx = 0;
  for (const auto& e : params) {
    Tensor& w = e.param->value;
    Tensor& g = e.param->grad;
    Tensor& m = state.first_moment[idx];
    Tensor& v = state.second_moment[idx];
    ++idx;
    if (m.shape() != w.shape())
      throw DimensionError("optimizer moments for " + e.name + " have shape " + shape_str(m.shape()) +
                           ", parameter is " + shape_str(w.shape()));
    const double decay = e.decay ? 1.0 - lr * c.weight_decay : 1.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g[i];
      const double mi = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
      const double vi = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      const double update = (mi / bc1) / (std::sqrt(vi / bc2) + c.eps);
      w[i] = static_cast<float>(double(w[i]) * decay - lr * update);
    }
    g.fill(0.0f);
  }
}

double clip_grad_norm(ParameterSet<float>& params, double max_norm) {
  double sq = 0;
  for (const auto& e : params)
    for (float g : e.param->grad.data()) sq += double(g) * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0) {
    const float s = static_cast<float>(max_norm / norm);
    for (const auto& e : params)
      for (float& g : e.param->grad.storage()) g *= s;
  }
  return norm;
}

double lr_at(const Schedule& s, std::size_t step) {
  if (step > s.total_steps)
    throw ConfigError("lr_at: step " + std::to_string(step) + " beyond total " + std::to_string(s.total_steps));
  if (step < s.warmup_steps) return s.base_lr * double(step) / double(s.warmup_steps);
  const std::size_t decay_steps = s.total_steps - s.warmup_steps;
  const double progress = decay_steps == 0 ? 1.0 : double(step - s.warmup_steps) / double(decay_steps);
  return s.min_lr + (s.base_lr - s.min_lr) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

}  // namespace spgt
