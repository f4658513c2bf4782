#include "spgt/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace spgt::ops {

namespace {

template <typename T>
void require_matrix(const TensorT<T>& t, const char* op) {
  if (t.rank() != 2) throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_str(t.shape()));
}

template <typename T>
void require_same(const TensorT<T>& a, const TensorT<T>& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

template <typename T>
bool wants(const std::shared_ptr<Node<T>>& n) {
  return n->requires_grad;
}

}  // namespace

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  require_matrix(av, "matmul");
  require_matrix(bv, "matmul");
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  if (bv.dim(0) != k)
    throw DimensionError("matmul: inner extents differ, " + shape_str(av.shape()) + " x " +
                         shape_str(bv.shape()));
  TensorT<T> out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    T* o = &out[i * n];
    for (std::size_t p = 0; p < k; ++p) {
      const T s = av[i * k + p];
      if (s == T(0)) continue;
      const T* br = &bv[p * n];
      for (std::size_t j = 0; j < n; ++j) o[j] += s * br[j];
    }
  }
  auto an = a.node(), bn = b.node();
  return make_result<T>(std::move(out), {a, b}, [an, bn, m, k, n](Node<T>& self) {
    const auto& g = self.grad;
    const auto& av = an->value();
    const auto& bv = bn->value();
    if (wants(an)) {
      auto& ga = an->grad_buffer();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const T* gr = &g[i * n];
          const T* br = &bv[p * n];
          T acc = 0;
          for (std::size_t j = 0; j < n; ++j) acc += gr[j] * br[j];
          ga[i * k + p] += acc;
        }
    }
    if (wants(bn)) {
      auto& gb = bn->grad_buffer();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const T s = av[i * k + p];
          if (s == T(0)) continue;
          const T* gr = &g[i * n];
          T* o = &gb[p * n];
          for (std::size_t j = 0; j < n; ++j) o[j] += s * gr[j];
        }
    }
  });
}

template <typename T>
Var<T> transpose(const Var<T>& a) {
  const auto& av = a.value();
  require_matrix(av, "transpose");
  const std::size_t m = av.dim(0), n = av.dim(1);
  TensorT<T> out({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = av[i * n + j];
  auto an = a.node();
  return make_result<T>(std::move(out), {a}, [an, m, n](Node<T>& self) {
    auto& ga = an->grad_buffer();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += self.grad[j * m + i];
  });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same(a.value(), b.value(), "add");
  TensorT<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  auto an = a.node(), bn = b.node();
  return make_result<T>(std::move(out), {a, b}, [an, bn](Node<T>& self) {
    for (auto* p : {an.get(), bn.get()}) {
      if (!p->requires_grad) continue;
      auto& g = p->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require_same(a.value(), b.value(), "sub");
  TensorT<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  auto an = a.node(), bn = b.node();
  return make_result<T>(std::move(out), {a, b}, [an, bn](Node<T>& self) {
    if (wants(an)) {
      auto& g = an->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (wants(bn)) {
      auto& g = bn->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_same(a.value(), b.value(), "mul");
  TensorT<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  auto an = a.node(), bn = b.node();
  return make_result<T>(std::move(out), {a, b}, [an, bn](Node<T>& self) {
    if (wants(an)) {
      auto& g = an->grad_buffer();
      const auto& bv = bn->value();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bv[i];
    }
    if (wants(bn)) {
      auto& g = bn->grad_buffer();
      const auto& av = an->value();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * av[i];
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
  TensorT<T> out = a.value();
  for (auto& v : out.storage()) v *= s;
  auto an = a.node();
  return make_result<T>(std::move(out), {a}, [an, s](Node<T>& self) {
    auto& g = an->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * s;
  });
}

template <typename T>
Var<T> abs(const Var<T>& a) {
  TensorT<T> out = a.value();
  for (auto& v : out.storage()) v = std::fabs(v);
  auto an = a.node();
  return make_result<T>(std::move(out), {a}, [an](Node<T>& self) {
    auto& g = an->grad_buffer();
    const auto& av = an->value();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T x = av[i];
      const T sign = x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0));
      g[i] += self.grad[i] * sign;
    }
  });
}

template <typename T>
Var<T> add_row(const Var<T>& a, const Var<T>& row) {
  const auto& av = a.value();
  const auto& rv = row.value();
  if (rv.size() != av.cols() || (rv.rank() == 2 && rv.dim(0) != 1))
    throw DimensionError("add_row: row " + shape_str(rv.shape()) + " does not fit " +
                         shape_str(av.shape()));
  TensorT<T> out = av;
  const std::size_t n = av.cols(), m = av.rows();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += rv[j];
  auto an = a.node(), rn = row.node();
  return make_result<T>(std::move(out), {a, row}, [an, rn, m, n](Node<T>& self) {
    if (wants(an)) {
      auto& g = an->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (wants(rn)) {
      auto& g = rn->grad_buffer();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[i * n + j];
    }
  });
}

template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  return add_row(matmul(x, w), b);
}

template <typename T>
Var<T> gelu(const Var<T>& a) {
  constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double k = 0.044715;
  TensorT<T> out = a.value();
  for (auto& v : out.storage()) {
    const double x = v;
    v = static_cast<T>(0.5 * x * (1.0 + std::tanh(c * (x + k * x * x * x))));
  }
  auto an = a.node();
  return make_result<T>(std::move(out), {a}, [an](Node<T>& self) {
    auto& g = an->grad_buffer();
    const auto& av = an->value();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double x = av[i];
      const double t = std::tanh(c * (x + k * x * x * x));
      const double d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * c * (1.0 + 3.0 * k * x * x);
      g[i] += static_cast<T>(self.grad[i] * d);
    }
  });
}

template <typename T>
Var<T> softmax_lastaxis(const Var<T>& a) {
  const auto& av = a.value();
  const std::size_t n = av.cols(), m = av.rows();
  TensorT<T> out(av.shape());
  for (std::size_t i = 0; i < m; ++i) {
    const T* x = &av[i * n];
    T* y = &out[i * n];
    const T mx = *std::max_element(x, x + n);
    double sum = 0;
    for (std::size_t j = 0; j < n; ++j) {
      y[j] = std::exp(x[j] - mx);
      sum += y[j];
    }
    const double inv = 1.0 / sum;
    for (std::size_t j = 0; j < n; ++j) y[j] = static_cast<T>(y[j] * inv);
  }
  auto an = a.node();
  return make_result<T>(std::move(out), {a}, [an, m, n](Node<T>& self) {
    auto& g = an->grad_buffer();
    const auto& y = self.value();
    for (std::size_t i = 0; i < m; ++i) {
      double dot = 0;
      for (std::size_t j = 0; j < n; ++j) dot += double(self.grad[i * n + j]) * y[i * n + j];
      for (std::size_t j = 0; j < n; ++j)
        g[i * n + j] += static_cast<T>(y[i * n + j] * (self.grad[i * n + j] - dot));
    }
  });
}

template <typename T>
Var<T> log_softmax_lastaxis(const Var<T>& a) {
  const auto& av = a.value();
  const std::size_t n = av.cols(), m = av.rows();
  TensorT<T> out(av.shape());
  for (std::size_t i = 0; i < m; ++i) {
    const T* x = &av[i * n];
    const T mx = *std::max_element(x, x + n);
    double sum = 0;
    for (std::size_t j = 0; j < n; ++j) sum += std::exp(double(x[j] - mx));
    const double lse = double(mx) + std::log(sum);
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = static_cast<T>(x[j] - lse);
  }
  auto an = a.node();
  return make_result<T>(std::move(out), {a}, [an, m, n](Node<T>& self) {
    auto& g = an->grad_buffer();
    const auto& y = self.value();
    for (std::size_t i = 0; i < m; ++i) {
      double gsum = 0;
      for (std::size_t j = 0; j < n; ++j) gsum += self.grad[i * n + j];
      for (std::size_t j = 0; j < n; ++j)
        g[i * n + j] += static_cast<T>(self.grad[i * n + j] - std::exp(double(y[i * n + j])) * gsum);
    }
  });
}

template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gain, const Var<T>& bias, T eps) {
  const auto& xv = x.value();
  const std::size_t n = xv.cols(), m = xv.rows();
  if (gain.value().size() != n || bias.value().size() != n)
    throw DimensionError("layer_norm: gain/bias " + shape_str(gain.shape()) + "/" +
                         shape_str(bias.shape()) + " vs rows of " + shape_str(xv.shape()));
  TensorT<T> out(xv.shape());
  std::vector<T> xhat(xv.size());
  std::vector<T> rstd(m);
  const auto& gv = gain.value();
  const auto& bv = bias.value();
  for (std::size_t i = 0; i < m; ++i) {
    const T* r = &xv[i * n];
    double mean = 0;
    for (std::size_t j = 0; j < n; ++j) mean += r[j];
    mean /= double(n);
    double var = 0;
    for (std::size_t j = 0; j < n; ++j) var += (r[j] - mean) * (r[j] - mean);
    var /= double(n);
    const double rs = 1.0 / std::sqrt(var + double(eps));
    rstd[i] = static_cast<T>(rs);
    for (std::size_t j = 0; j < n; ++j) {
      const T h = static_cast<T>((r[j] - mean) * rs);
      xhat[i * n + j] = h;
      out[i * n + j] = h * gv[j] + bv[j];
    }
  }
  auto xn = x.node(), gn = gain.node(), bn = bias.node();
  return make_result<T>(
      std::move(out), {x, gain, bias},
      [xn, gn, bn, m, n, xhat = std::move(xhat), rstd = std::move(rstd)](Node<T>& self) {
        const auto& g = self.grad;
        const auto& gv = gn->value();
        if (wants(bn)) {
          auto& gb = bn->grad_buffer();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
        }
        if (wants(gn)) {
          auto& gg = gn->grad_buffer();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) gg[j] += g[i * n + j] * xhat[i * n + j];
        }
        if (wants(xn)) {
          auto& gx = xn->grad_buffer();
          for (std::size_t i = 0; i < m; ++i) {
            double mean_d = 0, mean_dx = 0;
            for (std::size_t j = 0; j < n; ++j) {
              const double d = double(g[i * n + j]) * gv[j];
              mean_d += d;
              mean_dx += d * xhat[i * n + j];
            }
            mean_d /= double(n);
            mean_dx /= double(n);
            for (std::size_t j = 0; j < n; ++j) {
              const double d = double(g[i * n + j]) * gv[j];
              gx[i * n + j] += static_cast<T>(rstd[i] * (d - mean_d - xhat[i * n + j] * mean_dx));
            }
          }
        }
      });
}

template <typename T>
Var<T> gather_rows(const Var<T>& table, std::span<const std::size_t> idx) {
  const auto& tv = table.value();
  const std::size_t n = tv.cols(), rows = tv.rows();
  if (idx.empty()) throw DimensionError("gather_rows: empty index list");
  TensorT<T> out({idx.size(), n});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= rows)
      throw DimensionError("gather_rows: index " + std::to_string(idx[i]) + " out of " +
                           std::to_string(rows) + " rows");
    std::copy_n(&tv[idx[i] * n], n, &out[i * n]);
  }
  auto tn = table.node();
  std::vector<std::size_t> ix(idx.begin(), idx.end());
  return make_result<T>(std::move(out), {table}, [tn, n, ix = std::move(ix)](Node<T>& self) {
    auto& g = tn->grad_buffer();
    for (std::size_t i = 0; i < ix.size(); ++i) {
      T* dst = &g[ix[i] * n];
      const T* src = &self.grad[i * n];
      for (std::size_t j = 0; j < n; ++j) dst[j] += src[j];
    }
  });
}

template <typename T>
Var<T> concat_rows(const Var<T>& a, const Var<T>& b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.cols() != bv.cols())
    throw DimensionError("concat_rows: " + shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
  const std::size_t n = av.cols();
  TensorT<T> out({av.rows() + bv.rows(), n});
  std::copy(av.data().begin(), av.data().end(), out.storage().begin());
  std::copy(bv.data().begin(), bv.data().end(), out.storage().begin() + av.size());
  auto an = a.node(), bn = b.node();
  const std::size_t split = av.size();
  return make_result<T>(std::move(out), {a, b}, [an, bn, split](Node<T>& self) {
    if (wants(an)) {
      auto& g = an->grad_buffer();
      for (std::size_t i = 0; i < split; ++i) g[i] += self.grad[i];
    }
    if (wants(bn)) {
      auto& g = bn->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[split + i];
    }
  });
}

template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t m = parts[0].value().rows();
  std::size_t total = 0;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    if (p.value().rank() != 2 || p.value().rows() != m)
      throw DimensionError("concat_cols: row count mismatch at " + shape_str(p.shape()));
    widths.push_back(p.value().cols());
    total += widths.back();
  }
  TensorT<T> out({m, total});
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& v = parts[k].value();
    for (std::size_t i = 0; i < m; ++i) std::copy_n(&v[i * widths[k]], widths[k], &out[i * total + off]);
    off += widths[k];
  }
  std::vector<std::shared_ptr<Node<T>>> nodes;
  for (const auto& p : parts) nodes.push_back(p.node());
  return make_result<T>(std::move(out), parts, [nodes, widths, m, total](Node<T>& self) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < nodes.size(); ++k) {
      if (nodes[k]->requires_grad) {
        auto& g = nodes[k]->grad_buffer();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < widths[k]; ++j) g[i * widths[k] + j] += self.grad[i * total + off + j];
      }
      off += widths[k];
    }
  });
}

template <typename T>
Var<T> slice_cols(const Var<T>& a, std::size_t start, std::size_t len) {
  const auto& av = a.value();
  require_matrix(av, "slice_cols");
  const std::size_t m = av.dim(0), n = av.dim(1);
  if (len == 0 || start + len > n)
    throw DimensionError("slice_cols: [" + std::to_string(start) + ", " + std::to_string(start + len) +
                         ") outside " + shape_str(av.shape()));
  TensorT<T> out({m, len});
  for (std::size_t i = 0; i < m; ++i) std::copy_n(&av[i * n + start], len, &out[i * len]);
  auto an = a.node();
  return make_result<T>(std::move(out), {a}, [an, m, n, start, len](Node<T>& self) {
    auto& g = an->grad_buffer();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < len; ++j) g[i * n + start + j] += self.grad[i * len + j];
  });
}

template <typename T>
Var<T> broadcast_rows(const Var<T>& row, std::size_t count) {
  const auto& rv = row.value();
  if (rv.rank() == 2 && rv.dim(0) != 1)
    throw DimensionError("broadcast_rows: expected one row, got " + shape_str(rv.shape()));
  const std::size_t n = rv.size();
  TensorT<T> out({count, n});
  for (std::size_t i = 0; i < count; ++i) std::copy_n(&rv[0], n, &out[i * n]);
  auto rn = row.node();
  return make_result<T>(std::move(out), {row}, [rn, count, n](Node<T>& self) {
    auto& g = rn->grad_buffer();
    for (std::size_t i = 0; i < count; ++i)
      for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[i * n + j];
  });
}

template <typename T>
Var<T> reshape(const Var<T>& a, Shape shape) {
  TensorT<T> out = a.value().reshaped(std::move(shape));
  auto an = a.node();
  return make_result<T>(std::move(out), {a}, [an](Node<T>& self) {
    auto& g = an->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

template <typename T>
Var<T> mean_rows(const Var<T>& a) {
  const auto& av = a.value();
  const std::size_t n = av.cols(), m = av.rows();
  TensorT<T> out({1, n});
  std::vector<double> acc(n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) acc[j] += av[i * n + j];
  for (std::size_t j = 0; j < n; ++j) out[j] = static_cast<T>(acc[j] / double(m));
  auto an = a.node();
  return make_result<T>(std::move(out), {a}, [an, m, n](Node<T>& self) {
    auto& g = an->grad_buffer();
    const T inv = T(1) / T(m);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) g[i * n + j] += self.grad[j] * inv;
  });
}

template <typename T>
Var<T> sum_all(const Var<T>& a) {
  double s = 0;
  for (T v : a.value().data()) s += v;
  auto an = a.node();
  return make_result<T>(TensorT<T>::scalar(static_cast<T>(s)), {a}, [an](Node<T>& self) {
    auto& g = an->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0];
  });
}

template <typename T>
Var<T> mean_all(const Var<T>& a) {
  return scale(sum_all(a), T(1) / T(a.value().size()));
}

template <typename T>
Var<T> mse(const Var<T>& a, const TensorT<T>& target) {
  require_same(a.value(), target, "mse");
  const auto& av = a.value();
  double s = 0;
  for (std::size_t i = 0; i < av.size(); ++i) {
    const double d = double(av[i]) - double(target[i]);
    s += d * d;
  }
  const double count = double(av.size());
  auto an = a.node();
  return make_result<T>(TensorT<T>::scalar(static_cast<T>(s / count)), {a},
                        [an, target, count](Node<T>& self) {
                          auto& g = an->grad_buffer();
                          const auto& av = an->value();
                          const double k = 2.0 * double(self.grad[0]) / count;
                          for (std::size_t i = 0; i < g.size(); ++i)
                            g[i] += static_cast<T>(k * (double(av[i]) - double(target[i])));
                        });
}

template <typename T>
Var<T> nll_loss(const Var<T>& logp, std::span<const int> labels) {
  const auto& lv = logp.value();
  require_matrix(lv, "nll_loss");
  const std::size_t b = lv.dim(0), c = lv.dim(1);
  if (labels.size() != b)
    throw DimensionError("nll_loss: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(b) + " rows");
  double s = 0;
  for (std::size_t i = 0; i < b; ++i) {
    if (labels[i] < 0 || std::size_t(labels[i]) >= c)
      throw DataError("label " + std::to_string(labels[i]) + " outside [0, " + std::to_string(c) + ")");
    s -= lv[i * c + labels[i]];
  }
  auto ln = logp.node();
  std::vector<int> lab(labels.begin(), labels.end());
  return make_result<T>(TensorT<T>::scalar(static_cast<T>(s / double(b))), {logp},
                        [ln, b, c, lab = std::move(lab)](Node<T>& self) {
                          auto& g = ln->grad_buffer();
                          const T k = self.grad[0] / T(b);
                          for (std::size_t i = 0; i < b; ++i) g[i * c + lab[i]] -= k;
                        });
}

template <typename T>
Var<T> cross_entropy(const Var<T>& logits, std::span<const int> labels) {
  return nll_loss(log_softmax_lastaxis(logits), labels);
}

template <typename T>
Var<T> multilabel_soft_margin(const Var<T>& logits, const TensorT<T>& labels) {
  require_same(logits.value(), labels, "multilabel_soft_margin");
  for (T y : labels.data())
    if (y != T(0) && y != T(1)) throw DataError("multilabel_soft_margin: labels must be 0 or 1");
  const auto& xv = logits.value();
  auto softplus = [](double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); };
  double s = 0;
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const double x = xv[i], y = labels[i];
    s += y * softplus(-x) + (1.0 - y) * softplus(x);
  }
  const double count = double(xv.size());
  auto xn = logits.node();
  return make_result<T>(TensorT<T>::scalar(static_cast<T>(s / count)), {logits},
                        [xn, labels, count](Node<T>& self) {
                          auto& g = xn->grad_buffer();
                          const auto& xv = xn->value();
                          const double k = double(self.grad[0]) / count;
                          for (std::size_t i = 0; i < g.size(); ++i) {
                            const double sig = 1.0 / (1.0 + std::exp(-double(xv[i])));
                            g[i] += static_cast<T>(k * (sig - double(labels[i])));
                          }
                        });
}

template <typename T>
Var<T> im2col3x3(const Var<T>& x, std::size_t h, std::size_t w) {
  const auto& xv = x.value();
  require_matrix(xv, "im2col3x3");
  const std::size_t c = xv.dim(1);
  if (xv.dim(0) != h * w)
    throw DimensionError("im2col3x3: " + shape_str(xv.shape()) + " is not a " + std::to_string(h) + "x" +
                         std::to_string(w) + " map");
  // src[(pixel, tap)] = source pixel index with replicate padding
  std::vector<std::size_t> src(h * w * 9);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t xx = 0; xx < w; ++xx)
      for (std::size_t ky = 0; ky < 3; ++ky)
        for (std::size_t kx = 0; kx < 3; ++kx) {
          const long sy = std::clamp<long>(long(y) + long(ky) - 1, 0, long(h) - 1);
          const long sx = std::clamp<long>(long(xx) + long(kx) - 1, 0, long(w) - 1);
          src[(y * w + xx) * 9 + ky * 3 + kx] = std::size_t(sy) * w + std::size_t(sx);
        }
  TensorT<T> out({h * w, 9 * c});
  for (std::size_t p = 0; p < h * w; ++p)
    for (std::size_t t = 0; t < 9; ++t) std::copy_n(&xv[src[p * 9 + t] * c], c, &out[(p * 9 + t) * c]);
  auto xn = x.node();
  return make_result<T>(std::move(out), {x}, [xn, c, src = std::move(src)](Node<T>& self) {
    auto& g = xn->grad_buffer();
    const std::size_t taps = src.size();
    for (std::size_t q = 0; q < taps; ++q) {
      T* dst = &g[src[q] * c];
      const T* s = &self.grad[q * c];
      for (std::size_t j = 0; j < c; ++j) dst[j] += s[j];
    }
  });
}

template <typename T>
Var<T> upsample_nearest(const Var<T>& x, std::size_t h, std::size_t w, std::size_t factor) {
  const auto& xv = x.value();
  require_matrix(xv, "upsample_nearest");
  const std::size_t c = xv.dim(1);
  if (xv.dim(0) != h * w || factor == 0)
    throw DimensionError("upsample_nearest: " + shape_str(xv.shape()) + " is not a " + std::to_string(h) +
                         "x" + std::to_string(w) + " map");
  const std::size_t oh = h * factor, ow = w * factor;
  TensorT<T> out({oh * ow, c});
  for (std::size_t y = 0; y < oh; ++y)
    for (std::size_t xx = 0; xx < ow; ++xx)
      std::copy_n(&xv[((y / factor) * w + xx / factor) * c], c, &out[(y * ow + xx) * c]);
  auto xn = x.node();
  return make_result<T>(std::move(out), {x}, [xn, w, c, factor, oh, ow](Node<T>& self) {
    auto& g = xn->grad_buffer();
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xx = 0; xx < ow; ++xx) {
        T* dst = &g[((y / factor) * w + xx / factor) * c];
        const T* s = &self.grad[(y * ow + xx) * c];
        for (std::size_t j = 0; j < c; ++j) dst[j] += s[j];
      }
  });
}

#define SPGT_INSTANTIATE_OPS(T)                                                               \
  template Var<T> matmul(const Var<T>&, const Var<T>&);                                       \
  template Var<T> transpose(const Var<T>&);                                                   \
  template Var<T> add(const Var<T>&, const Var<T>&);                                          \
  template Var<T> sub(const Var<T>&, const Var<T>&);                                          \
  template Var<T> mul(const Var<T>&, const Var<T>&);                                          \
  template Var<T> scale(const Var<T>&, T);                                                    \
  template Var<T> abs(const Var<T>&);                                                         \
  template Var<T> add_row(const Var<T>&, const Var<T>&);                                      \
  template Var<T> linear(const Var<T>&, const Var<T>&, const Var<T>&);                        \
  template Var<T> gelu(const Var<T>&);                                                        \
  template Var<T> softmax_lastaxis(const Var<T>&);                                            \
  template Var<T> log_softmax_lastaxis(const Var<T>&);                                        \
  template Var<T> layer_norm(const Var<T>&, const Var<T>&, const Var<T>&, T);                 \
  template Var<T> gather_rows(const Var<T>&, std::span<const std::size_t>);                   \
  template Var<T> concat_rows(const Var<T>&, const Var<T>&);                                  \
  template Var<T> concat_cols(const std::vector<Var<T>>&);                                    \
  template Var<T> slice_cols(const Var<T>&, std::size_t, std::size_t);                       \
  template Var<T> broadcast_rows(const Var<T>&, std::size_t);                                 \
  template Var<T> reshape(const Var<T>&, Shape);                                              \
  template Var<T> mean_rows(const Var<T>&);                                                   \
  template Var<T> sum_all(const Var<T>&);                                                     \
  template Var<T> mean_all(const Var<T>&);                                                    \
  template Var<T> mse(const Var<T>&, const TensorT<T>&);                                      \
  template Var<T> nll_loss(const Var<T>&, std::span<const int>);                              \
  template Var<T> cross_entropy(const Var<T>&, std::span<const int>);                         \
  template Var<T> multilabel_soft_margin(const Var<T>&, const TensorT<T>&);                   \
  template Var<T> im2col3x3(const Var<T>&, std::size_t, std::size_t);                         \
  template Var<T> upsample_nearest(const Var<T>&, std::size_t, std::size_t, std::size_t);

SPGT_INSTANTIATE_OPS(float)
SPGT_INSTANTIATE_OPS(double)

}  // namespace spgt::ops
