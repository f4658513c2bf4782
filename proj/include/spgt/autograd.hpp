#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "spgt/tensor.hpp"

namespace spgt {

template <typename T>
struct Parameter {
  TensorT<T> value;
  /// Gradient slot; mutable so read-only forward passes can bind it.
  mutable TensorT<T> grad;

  Parameter() = default;
  explicit Parameter(TensorT<T> v) : value(std::move(v)), grad(value.shape()) {}
  void zero_grad() const { grad.fill(T(0)); }
};

template <typename T>
struct NamedParameter {
  std::string name;
  Parameter<T>* param;
  /// Whether decoupled weight decay applies (false for biases, norms, tokens).
  bool decay = true;
};

/// Non-owning, ordered view over a model's parameters. Order is part of the
/// checkpoint contract.
template <typename T>
class ParameterSet {
 public:
  void add(std::string name, Parameter<T>& p, bool decay = true) {
    entries_.push_back({std::move(name), &p, decay});
  }
  void append(const ParameterSet& other) {
    entries_.insert(entries_.end(), other.entries_.begin(), other.entries_.end());
  }
  void append(const ParameterSet& other, const std::string& prefix) {
    for (const auto& e : other.entries_) entries_.push_back({prefix + e.name, e.param, e.decay});
  }

  std::size_t size() const { return entries_.size(); }
  std::size_t element_count() const;
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }
  const NamedParameter<T>& operator[](std::size_t i) const { return entries_[i]; }
  Parameter<T>* find(const std::string& name) const;

  void zero_grad();

 private:
  std::vector<NamedParameter<T>> entries_;
};

template <typename T>
struct Node {
  TensorT<T> owned;
  const TensorT<T>* ref = nullptr;  // parameter leaves alias the parameter value
  TensorT<T>* param_grad = nullptr;
  TensorT<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  const TensorT<T>& value() const { return ref ? *ref : owned; }
  /// Gradient accumulator; parameter leaves accumulate into Parameter::grad.
  TensorT<T>& grad_buffer() {
    if (param_grad) return *param_grad;
    if (grad.empty()) grad = TensorT<T>(value().shape());
    return grad;
  }
};

/// Handle to a node of the reverse-mode tape. Copies share the node.
template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> n) : node_(std::move(n)) {}

  static Var constant(TensorT<T> v);
  static Var leaf(const Parameter<T>& p);

  const TensorT<T>& value() const { return node_->value(); }
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  const std::shared_ptr<Node<T>>& node() const { return node_; }
  /// Scalar value of a single-element result.
  T item() const;

  /// Reverse sweep from this (single-element) node with seed 1.
  void backward() const;
  void backward(const TensorT<T>& seed) const;

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Thread-local switch; while disabled, operations record no tape.
class GradMode {
 public:
  static bool enabled();
  static void set(bool on);
};

class NoGradGuard {
 public:
  NoGradGuard() : prev_(GradMode::enabled()) { GradMode::set(false); }
  ~NoGradGuard() { GradMode::set(prev_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

/// Builds a result node. When no input requires a gradient (or grad mode is
/// off) the backward closure is dropped and the result is a plain constant.
template <typename T>
Var<T> make_result(TensorT<T> value, std::vector<Var<T>> inputs,
                   std::function<void(Node<T>&)> backward_fn);

}  // namespace spgt
