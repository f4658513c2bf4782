#include "spgt/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "spgt/rng.hpp"

namespace spgt {

namespace {

template <typename T>
double evaluate(const std::function<Var<T>()>& loss) {
  NoGradGuard guard;
  const double v = static_cast<double>(loss().item());
  if (!std::isfinite(v)) throw EvaluationError("grad_check: loss evaluated to a non-finite value");
  return v;
}

}  // namespace

template <typename T>
GradCheckReport grad_check(const std::function<Var<T>()>& loss, ParameterSet<T>& params,
                           const GradCheckOptions& opts) {
  if (!(opts.eps >= 1e-4 && opts.eps <= 1e-2))
    throw ConfigError("grad_check: eps " + std::to_string(opts.eps) + " outside [1e-4, 1e-2]");

  params.zero_grad();
  Var<T> root = loss();
  if (!std::isfinite(static_cast<double>(root.item())))
    throw EvaluationError("grad_check: loss evaluated to a non-finite value");
  root.backward();

  GradCheckReport report;
  const std::size_t per_param = std::max<std::size_t>(64, opts.max_elements_per_param);
  Rng rng(opts.seed);
  for (const auto& entry : params) {
    Parameter<T>& p = *entry.param;
    const TensorT<T> analytic = p.grad;
    std::vector<std::size_t> idx;
    if (p.value.size() <= per_param) {
      for (std::size_t i = 0; i < p.value.size(); ++i) idx.push_back(i);
    } else {
      auto perm = rng.permutation(p.value.size());
      idx.assign(perm.begin(), perm.begin() + per_param);
      std::sort(idx.begin(), idx.end());
    }
    GradCheckEntry e{entry.name};
    for (std::size_t i : idx) {
      const T orig = p.value[i];
      const T hi = static_cast<T>(orig + opts.eps);
      const T lo = static_cast<T>(orig - opts.eps);
      p.value[i] = hi;
      const double fp = evaluate(loss);
      p.value[i] = lo;
      const double fm = evaluate(loss);
      p.value[i] = orig;
      const double numeric = (fp - fm) / (double(hi) - double(lo));
      const double a = analytic[i];
      const double rel = std::fabs(a - numeric) / std::max({std::fabs(a), std::fabs(numeric), 1e-6});
      if (rel > e.max_rel_error || e.checked == 0) {
        e.max_rel_error = rel;
        e.worst_index = i;
        e.analytic = a;
        e.numeric = numeric;
      }
      ++e.checked;
    }
    if (e.max_rel_error >= report.max_rel_error) {
      report.max_rel_error = e.max_rel_error;
      report.worst_param = e.param;
    }
    report.per_param.push_back(std::move(e));
  }
  return report;
}

template GradCheckReport grad_check(const std::function<Var<float>()>&, ParameterSet<float>&,
                                    const GradCheckOptions&);
template GradCheckReport grad_check(const std::function<Var<double>()>&, ParameterSet<double>&,
                                    const GradCheckOptions&);

}  // namespace spgt
