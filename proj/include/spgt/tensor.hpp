#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "spgt/error.hpp"

namespace spgt {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);
std::size_t shape_numel(const Shape& s);

/// Dense row-major tensor (last axis fastest). Most operations treat a rank-2
/// tensor as a matrix of rows; rank-1 tensors are accepted where a single row
/// is meant (biases, gains).
template <typename T>
class TensorT {
 public:
  using value_type = T;

  TensorT() = default;
  explicit TensorT(Shape shape, T fill = T(0))
      : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {
    check_extents();
  }
  TensorT(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_extents();
    if (data_.size() != shape_numel(shape_))
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_str(shape_));
  }

  static TensorT matrix(std::size_t rows, std::size_t cols, std::vector<T> data) {
    return TensorT({rows, cols}, std::move(data));
  }
  static TensorT scalar(T v) { return TensorT({1}, std::vector<T>{v}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  /// Rows/cols of the matrix view: the last axis is the column axis.
  std::size_t cols() const { return shape_.empty() ? 0 : shape_.back(); }
  std::size_t rows() const { return cols() == 0 ? 0 : data_.size() / cols(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }
  T& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  const T& at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  std::span<T> row(std::size_t r) { return std::span<T>(data_).subspan(r * cols(), cols()); }
  std::span<const T> row(std::size_t r) const {
    return std::span<const T>(data_).subspan(r * cols(), cols());
  }

  TensorT reshaped(Shape s) const {
    if (shape_numel(s) != data_.size())
      throw DimensionError("cannot reshape " + shape_str(shape_) + " to " + shape_str(s));
    return TensorT(std::move(s), data_);
  }

  template <typename U>
  TensorT<U> cast() const {
    return TensorT<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }
  bool all_finite() const;

  bool operator==(const TensorT& o) const = default;

 private:
  void check_extents() const {
    for (std::size_t e : shape_)
      if (e == 0) throw DimensionError("zero extent in shape " + shape_str(shape_));
  }

  Shape shape_;
  std::vector<T> data_;
};

using Tensor = TensorT<float>;

/// Bitwise equality, distinguishing -0.0/+0.0 and comparing NaN payloads.
template <typename T>
bool bitwise_equal(const TensorT<T>& a, const TensorT<T>& b);

}  // namespace spgt
