#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "glua/tensor.hpp"

namespace glua {

/// A trainable tensor together with its accumulated gradient.
///
/// `grad_pending` is set by Tape::backward and cleared by zero_grads; a
/// second backward into a pending parameter is rejected.
template <Real T>
struct Parameter {
  Parameter(std::string name, Tensor<T> value, bool decay = true)
      : name(std::move(name)), value(std::move(value)), grad(Tensor<T>::zeros(this->value.shape())),
        decay(decay) {}

  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  bool decay;
  bool grad_pending = false;
};

template <Real T>
void zero_grads(std::span<Parameter<T>* const> params) {
  for (Parameter<T>* p : params) {
    p->grad.fill(T{0});
    p->grad_pending = false;
  }
}

template <Real T>
class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
template <Real T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
};

/// Append-only record of a computation. Node inputs always precede the node,
/// so reverse append order is a valid reverse topological order.
template <Real T>
class Tape {
 public:
  /// Called once during backward with the node's output gradient. It pushes
  /// contributions into inputs through accumulate_grad.
  using BackwardFn = std::function<void(Tape&, const Tensor<T>& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Tensor<T> value);
  /// Leaf that requires a gradient but is not bound to a Parameter.
  Var<T> input(Tensor<T> value);
  /// Leaf bound to a parameter; the same parameter maps to one node per tape.
  Var<T> param(Parameter<T>& p);
  Var<T> record(Tensor<T> value, std::vector<std::size_t> inputs, BackwardFn backward);

  /// Reverse-mode sweep from a scalar loss. Parameter leaves receive their
  /// total derivative. Throws if called twice without reset().
  void backward(Var<T> loss);
  /// Clears node gradients so backward may run again on this tape.
  void reset();

  const Tensor<T>& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  /// Gradient of a node after backward; zeros if nothing flowed into it.
  const Tensor<T>& grad(Var<T> v);
  /// Gradient buffer of an input, materialized on first use. Returns nullptr
  /// when the input does not require a gradient.
  Tensor<T>* accumulate_grad(std::size_t id);

  std::size_t size() const noexcept { return nodes_.size(); }
  bool backward_done() const noexcept { return backward_done_; }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    Parameter<T>* param = nullptr;
    bool requires_grad = false;
    bool grad_ready = false;
  };

  Var<T> push(Node node);

  std::vector<Node> nodes_;
  std::unordered_map<Parameter<T>*, std::size_t> param_nodes_;
  bool backward_done_ = false;
};

template <Real T>
const Tensor<T>& Var<T>::value() const {
  return tape->value(id);
}

template <Real T>
bool Var<T>::requires_grad() const {
  return tape->requires_grad(id);
}

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace glua
