#include "glua/tape.hpp"

#include <stdexcept>

namespace glua {

template <Real T>
Var<T> Tape<T>::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var<T>{this, nodes_.size() - 1};
}

template <Real T>
Var<T> Tape<T>::constant(Tensor<T> value) {
  Node n;
  n.value = std::move(value);
  return push(std::move(n));
}

template <Real T>
Var<T> Tape<T>::input(Tensor<T> value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = true;
  return push(std::move(n));
}

template <Real T>
Var<T> Tape<T>::param(Parameter<T>& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var<T>{this, it->second};
  Node n;
  n.value = p.value;
  n.requires_grad = true;
  n.param = &p;
  Var<T> v = push(std::move(n));
  param_nodes_.emplace(&p, v.id);
  return v;
}

template <Real T>
Var<T> Tape<T>::record(Tensor<T> value, std::vector<std::size_t> inputs, BackwardFn backward) {
  Node n;
  n.value = std::move(value);
  for (std::size_t in : inputs) {
    if (in >= nodes_.size()) throw std::logic_error("tape input refers to a node not yet recorded");
    n.requires_grad = n.requires_grad || nodes_[in].requires_grad;
  }
  if (n.requires_grad) {
    n.inputs = std::move(inputs);
    n.backward = std::move(backward);
  }
  return push(std::move(n));
}

template <Real T>
Tensor<T>* Tape<T>::accumulate_grad(std::size_t id) {
  Node& n = nodes_.at(id);
  if (!n.requires_grad) return nullptr;
  if (!n.grad_ready) {
    n.grad = Tensor<T>::zeros(n.value.shape());
    n.grad_ready = true;
  }
  return &n.grad;
}

template <Real T>
const Tensor<T>& Tape<T>::grad(Var<T> v) {
  Node& n = nodes_.at(v.id);
  if (!n.grad_ready) {
    n.grad = Tensor<T>::zeros(n.value.shape());
    n.grad_ready = true;
  }
  return n.grad;
}

template <Real T>
void Tape<T>::backward(Var<T> loss) {
  if (loss.tape != this) throw std::logic_error("backward: loss belongs to a different tape");
  if (backward_done_) {
    throw std::logic_error("backward called twice on the same tape without reset");
  }
  const Node& root = nodes_.at(loss.id);
  if (root.value.numel() != 1) {
    throw ShapeError("backward: loss must be scalar, got shape " + shape_str(root.value.shape()));
  }
  for (const auto& [param, id] : param_nodes_) {
    if (param->grad_pending) {
      throw std::logic_error("backward: gradient of '" + param->name +
                             "' was not reset since the previous backward (call zero_grads)");
    }
  }
  backward_done_ = true;
  if (!root.requires_grad) return;

  accumulate_grad(loss.id)->fill(T{1});
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.grad_ready || !n.backward) continue;
    n.backward(*this, n.grad);
  }

  for (const auto& [param, id] : param_nodes_) {
    Node& n = nodes_[id];
    if (n.grad_ready) {
      auto dst = param->grad.data();
      auto src = n.grad.data();
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
    }
    param->grad_pending = true;
  }
}

template <Real T>
void Tape<T>::reset() {
  for (Node& n : nodes_) {
    n.grad = Tensor<T>();
    n.grad_ready = false;
  }
  backward_done_ = false;
}

template class Tape<float>;
template class Tape<double>;

}  // namespace glua
