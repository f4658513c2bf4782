#include "spgt/tensor.hpp"

#include <cmath>
#include <cstring>

namespace spgt {

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

std::size_t shape_numel(const Shape& s) {
  if (s.empty()) return 0;
  std::size_t n = 1;
  for (std::size_t e : s) n *= e;
  return n;
}

template <typename T>
bool TensorT<T>::all_finite() const {
  for (T v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

template <typename T>
bool bitwise_equal(const TensorT<T>& a, const TensorT<T>& b) {
  if (a.shape() != b.shape()) return false;
  return std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(T)) == 0;
}

template class TensorT<float>;
template class TensorT<double>;
template bool bitwise_equal(const TensorT<float>&, const TensorT<float>&);
template bool bitwise_equal(const TensorT<double>&, const TensorT<double>&);

}  // namespace spgt
