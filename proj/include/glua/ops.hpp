#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "glua/tape.hpp"

namespace glua {

/// Additive mask value for forbidden positions. Finite so that
/// max-subtraction never produces inf - inf.
inline constexpr double kMaskSentinel = -1e30;

enum class Activation { relu, sigmoid, silu };

template <Real T>
T sigmoid_scalar(T x);
template <Real T>
T silu_scalar(T x);
/// d/dx silu(x) = sigmoid(x) * (1 + x * (1 - sigmoid(x))).
template <Real T>
T silu_grad_scalar(T x);

// 2-D matrix product. Inner reduction runs in ascending index order.
template <Real T>
Var<T> matmul(Var<T> a, Var<T> b);

template <Real T>
Var<T> add(Var<T> a, Var<T> b);
template <Real T>
Var<T> sub(Var<T> a, Var<T> b);
template <Real T>
Var<T> mul(Var<T> a, Var<T> b);
template <Real T>
Var<T> scale(Var<T> x, T factor);

template <Real T>
Var<T> activation(Activation kind, Var<T> x);
template <Real T>
Var<T> relu(Var<T> x) { return activation(Activation::relu, x); }
template <Real T>
Var<T> sigmoid(Var<T> x) { return activation(Activation::sigmoid, x); }
template <Real T>
Var<T> silu(Var<T> x) { return activation(Activation::silu, x); }

template <Real T>
Var<T> transpose(Var<T> x);
template <Real T>
Var<T> reshape(Var<T> x, Shape shape);

/// Columns [offset, offset + length) of the last dimension.
template <Real T>
Var<T> slice_last(Var<T> x, std::size_t offset, std::size_t length);
/// Rows [offset, offset + count) of a 2-D tensor.
template <Real T>
Var<T> slice_rows(Var<T> x, std::size_t offset, std::size_t count);
template <Real T>
Var<T> concat_last(std::span<const Var<T>> parts);
/// First and second halves of the last dimension, which must be even.
template <Real T>
std::pair<Var<T>, Var<T>> split_half_last(Var<T> x);

template <Real T>
Var<T> sum(Var<T> x);
template <Real T>
Var<T> mean(Var<T> x);
/// Mean over the first axis of a 2-D tensor: [n x d] -> [1 x d].
template <Real T>
Var<T> mean_rows(Var<T> x);

/// Row lookup into a [vocab x d] table.
template <Real T>
Var<T> gather_rows(Var<T> table, std::span<const int> ids);

/// Softmax over the last dimension. `mask`, when given, is added before
/// normalization; its shape must equal a trailing suffix of x's shape and
/// its entries must be 0 or kMaskSentinel. A row with no unmasked entry is
/// an error.
template <Real T>
Var<T> softmax_last(Var<T> x, const Tensor<T>* mask = nullptr);

/// Plain (non-taped) softmax used by the loss and by diagnostics.
template <Real T>
void softmax_row(std::span<const T> in, std::span<T> out);

}  // namespace glua
