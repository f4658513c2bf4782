#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "spgt/autograd.hpp"

// Differentiable operations on Var<T>. All ops are strict about shapes: there
// is no implicit broadcasting except the explicitly named row-broadcast ops.

namespace spgt::ops {

template <typename T> Var<T> matmul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> transpose(const Var<T>& a);

template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> scale(const Var<T>& a, T s);
template <typename T> Var<T> abs(const Var<T>& a);

/// a[m x n] + row[n] added to every row.
template <typename T> Var<T> add_row(const Var<T>& a, const Var<T>& row);
/// x W + b.
template <typename T> Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b);

/// GELU, tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
template <typename T> Var<T> gelu(const Var<T>& a);
/// Softmax over the last axis with max subtraction.
template <typename T> Var<T> softmax_lastaxis(const Var<T>& a);
template <typename T> Var<T> log_softmax_lastaxis(const Var<T>& a);
/// Normalizes each row over the last axis, then applies gain and bias.
/// eps is added to the variance before the square root.
template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gain, const Var<T>& bias, T eps);

/// out[i] = table[idx[i]] (rows). Backward scatter-adds.
template <typename T> Var<T> gather_rows(const Var<T>& table, std::span<const std::size_t> idx);
template <typename T> Var<T> concat_rows(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> concat_cols(const std::vector<Var<T>>& parts);
template <typename T> Var<T> slice_cols(const Var<T>& a, std::size_t start, std::size_t len);
/// Repeats a single row `count` times.
template <typename T> Var<T> broadcast_rows(const Var<T>& row, std::size_t count);
template <typename T> Var<T> reshape(const Var<T>& a, Shape shape);

/// Mean over rows: [m x n] -> [1 x n].
template <typename T> Var<T> mean_rows(const Var<T>& a);
template <typename T> Var<T> sum_all(const Var<T>& a);
template <typename T> Var<T> mean_all(const Var<T>& a);

/// Elementwise mean of (a - target)^2 over all elements.
template <typename T> Var<T> mse(const Var<T>& a, const TensorT<T>& target);
/// Mean over rows of -logp[row, label[row]].
template <typename T> Var<T> nll_loss(const Var<T>& logp, std::span<const int> labels);
template <typename T> Var<T> cross_entropy(const Var<T>& logits, std::span<const int> labels);
/// Mean over all B*C elements of -(y log s(x) + (1-y) log s(-x)), s logistic.
template <typename T>
Var<T> multilabel_soft_margin(const Var<T>& logits, const TensorT<T>& labels);

/// 3x3 neighbourhoods of an [H*W x C] channels-last map with replicate padding:
/// [H*W x 9C], column order (ky, kx, c).
template <typename T> Var<T> im2col3x3(const Var<T>& x, std::size_t h, std::size_t w);
/// Nearest-neighbour upsampling of an [H*W x C] map by an integer factor.
template <typename T>
Var<T> upsample_nearest(const Var<T>& x, std::size_t h, std::size_t w, std::size_t factor);

}  // namespace spgt::ops
