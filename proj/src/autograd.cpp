#include "spgt/autograd.hpp"

#include <cmath>
#include <unordered_set>

namespace spgt {

namespace {
thread_local bool g_grad_enabled = true;
}

bool GradMode::enabled() { return g_grad_enabled; }
void GradMode::set(bool on) { g_grad_enabled = on; }

template <typename T>
std::size_t ParameterSet<T>::element_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.param->value.size();
  return n;
}

template <typename T>
Parameter<T>* ParameterSet<T>::find(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.name == name) return e.param;
  return nullptr;
}

template <typename T>
void ParameterSet<T>::zero_grad() {
  for (auto& e : entries_) e.param->zero_grad();
}

template <typename T>
Var<T> Var<T>::constant(TensorT<T> v) {
  auto n = std::make_shared<Node<T>>();
  n->owned = std::move(v);
  return Var(std::move(n));
}

template <typename T>
Var<T> Var<T>::leaf(const Parameter<T>& p) {
  auto n = std::make_shared<Node<T>>();
  n->ref = &p.value;
  if (GradMode::enabled()) {
    n->param_grad = &p.grad;
    n->requires_grad = true;
  }
  return Var(std::move(n));
}

template <typename T>
T Var<T>::item() const {
  if (value().size() != 1)
    throw DimensionError("item() on non-scalar tensor " + shape_str(shape()));
  return value()[0];
}

template <typename T>
void Var<T>::backward() const {
  if (value().size() != 1)
    throw DimensionError("backward() without seed needs a scalar, got " + shape_str(shape()));
  backward(TensorT<T>(shape(), T(1)));
}

template <typename T>
void Var<T>::backward(const TensorT<T>& seed) const {
  if (!requires_grad()) return;
  if (seed.shape() != shape())
    throw DimensionError("backward seed " + shape_str(seed.shape()) + " vs " + shape_str(shape()));

  // Iterative post-order DFS gives a topological order (parents first).
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, i] = stack.back();
    if (i < n->parents.size()) {
      Node<T>* p = n->parents[i++].get();
      if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  auto& g = node_->grad_buffer();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += seed[i];
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward_fn) n->backward_fn(*n);
    if (!n->param_grad) n->grad = TensorT<T>();  // release intermediates
  }
}

template <typename T>
Var<T> make_result(TensorT<T> value, std::vector<Var<T>> inputs,
                   std::function<void(Node<T>&)> backward_fn) {
  auto n = std::make_shared<Node<T>>();
  n->owned = std::move(value);
  if (GradMode::enabled()) {
    bool any = false;
    for (const auto& v : inputs) any = any || v.requires_grad();
    if (any) {
      n->requires_grad = true;
      for (auto& v : inputs) n->parents.push_back(v.node());
      n->backward_fn = std::move(backward_fn);
    }
  }
  return Var<T>(std::move(n));
}

template class ParameterSet<float>;
template class ParameterSet<double>;
template class Var<float>;
template class Var<double>;
template Var<float> make_result(TensorT<float>, std::vector<Var<float>>,
                                std::function<void(Node<float>&)>);
template Var<double> make_result(TensorT<double>, std::vector<Var<double>>,
                                 std::function<void(Node<double>&)>);

}  // namespace spgt
