#include "glua/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace glua {

namespace {

template <Real T>
Tape<T>& same_tape(Var<T> a, Var<T> b, const char* op) {
  if (a.tape == nullptr || a.tape != b.tape) {
    throw std::logic_error(std::string(op) + ": operands live on different tapes");
  }
  return *a.tape;
}

template <Real T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

template <Real T>
void require_rank2(const Tensor<T>& t, const char* op) {
  if (t.rank() != 2) throw ShapeError(std::string(op) + ": expected 2-D tensor, got " + shape_str(t.shape()));
}

}  // namespace

template <Real T>
T sigmoid_scalar(T x) {
  if (x >= T{0}) return T{1} / (T{1} + std::exp(-x));
  const T e = std::exp(x);
  return e / (T{1} + e);
}

template <Real T>
T silu_scalar(T x) {
  return x * sigmoid_scalar(x);
}

template <Real T>
T silu_grad_scalar(T x) {
  const T s = sigmoid_scalar(x);
  return s * (T{1} + x * (T{1} - s));
}

template <Real T>
Var<T> matmul(Var<T> a, Var<T> b) {
  Tape<T>& tape = same_tape(a, b, "matmul");
  const Tensor<T>& A = a.value();
  const Tensor<T>& B = b.value();
  if (A.rank() != 2 || B.rank() != 2 || A.dim(1) != B.dim(0)) {
    throw ShapeError("matmul: cannot multiply " + shape_str(A.shape()) + " by " + shape_str(B.shape()));
  }
  const std::size_t m = A.dim(0), k = A.dim(1), n = B.dim(1);
  Tensor<T> C({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const T aip = A.at(i, p);
      for (std::size_t j = 0; j < n; ++j) C.at(i, j) += aip * B.at(p, j);
    }
  }
  const std::size_t ia = a.id, ib = b.id;
  return tape.record(std::move(C), {ia, ib}, [ia, ib, m, k, n](Tape<T>& t, const Tensor<T>& dC) {
    const Tensor<T>& A = t.value(ia);
    const Tensor<T>& B = t.value(ib);
    if (Tensor<T>* dA = t.accumulate_grad(ia)) {
      // dA = dC * B^T
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          T acc{0};
          for (std::size_t j = 0; j < n; ++j) acc += dC.at(i, j) * B.at(p, j);
          dA->at(i, p) += acc;
        }
      }
    }
    if (Tensor<T>* dB = t.accumulate_grad(ib)) {
      // dB = A^T * dC
      for (std::size_t p = 0; p < k; ++p) {
        for (std::size_t i = 0; i < m; ++i) {
          const T aip = A.at(i, p);
          for (std::size_t j = 0; j < n; ++j) dB->at(p, j) += aip * dC.at(i, j);
        }
      }
    }
  });
}

template <Real T>
Var<T> add(Var<T> a, Var<T> b) {
  Tape<T>& tape = same_tape(a, b, "add");
  require_same_shape(a.value(), b.value(), "add");
  Tensor<T> out = a.value();
  auto o = out.data();
  auto bv = b.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += bv[i];
  const std::size_t ia = a.id, ib = b.id;
  return tape.record(std::move(out), {ia, ib}, [ia, ib](Tape<T>& t, const Tensor<T>& g) {
    for (std::size_t id : {ia, ib}) {
      if (Tensor<T>* d = t.accumulate_grad(id)) {
        for (std::size_t i = 0; i < g.numel(); ++i) (*d)[i] += g[i];
      }
    }
  });
}

template <Real T>
Var<T> sub(Var<T> a, Var<T> b) {
  Tape<T>& tape = same_tape(a, b, "sub");
  require_same_shape(a.value(), b.value(), "sub");
  Tensor<T> out = a.value();
  auto o = out.data();
  auto bv = b.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] -= bv[i];
  const std::size_t ia = a.id, ib = b.id;
  return tape.record(std::move(out), {ia, ib}, [ia, ib](Tape<T>& t, const Tensor<T>& g) {
    if (Tensor<T>* d = t.accumulate_grad(ia)) {
      for (std::size_t i = 0; i < g.numel(); ++i) (*d)[i] += g[i];
    }
    if (Tensor<T>* d = t.accumulate_grad(ib)) {
      for (std::size_t i = 0; i < g.numel(); ++i) (*d)[i] -= g[i];
    }
  });
}

template <Real T>
Var<T> mul(Var<T> a, Var<T> b) {
  Tape<T>& tape = same_tape(a, b, "mul");
  require_same_shape(a.value(), b.value(), "mul");
  Tensor<T> out = a.value();
  auto o = out.data();
  auto bv = b.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= bv[i];
  const std::size_t ia = a.id, ib = b.id;
  return tape.record(std::move(out), {ia, ib}, [ia, ib](Tape<T>& t, const Tensor<T>& g) {
    const Tensor<T>& A = t.value(ia);
    const Tensor<T>& B = t.value(ib);
    if (Tensor<T>* d = t.accumulate_grad(ia)) {
      for (std::size_t i = 0; i < g.numel(); ++i) (*d)[i] += g[i] * B[i];
    }
    if (Tensor<T>* d = t.accumulate_grad(ib)) {
      for (std::size_t i = 0; i < g.numel(); ++i) (*d)[i] += g[i] * A[i];
    }
  });
}

template <Real T>
Var<T> scale(Var<T> x, T factor) {
  Tensor<T> out = x.value();
  for (T& v : out.data()) v *= factor;
  const std::size_t ix = x.id;
  return x.tape->record(std::move(out), {ix}, [ix, factor](Tape<T>& t, const Tensor<T>& g) {
    if (Tensor<T>* d = t.accumulate_grad(ix)) {
      for (std::size_t i = 0; i < g.numel(); ++i) (*d)[i] += g[i] * factor;
    }
  });
}

template <Real T>
Var<T> activation(Activation kind, Var<T> x) {
  const Tensor<T>& in = x.value();
  Tensor<T> out(in.shape());
  for (std::size_t i = 0; i < in.numel(); ++i) {
    const T v = in[i];
    switch (kind) {
      case Activation::relu: out[i] = v > T{0} ? v : T{0}; break;
      case Activation::sigmoid: out[i] = sigmoid_scalar(v); break;
      case Activation::silu: out[i] = silu_scalar(v); break;
    }
  }
  const std::size_t ix = x.id;
  return x.tape->record(std::move(out), {ix}, [ix, kind](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T>* d = t.accumulate_grad(ix);
    if (!d) return;
    const Tensor<T>& in = t.value(ix);
    for (std::size_t i = 0; i < g.numel(); ++i) {
      const T v = in[i];
      T local{0};
      switch (kind) {
        case Activation::relu: local = v > T{0} ? T{1} : T{0}; break;
        case Activation::sigmoid: {
          const T s = sigmoid_scalar(v);
          local = s * (T{1} - s);
          break;
        }
        case Activation::silu: local = silu_grad_scalar(v); break;
      }
      (*d)[i] += g[i] * local;
    }
  });
}

template <Real T>
Var<T> transpose(Var<T> x) {
  const Tensor<T>& in = x.value();
  require_rank2(in, "transpose");
  const std::size_t r = in.dim(0), c = in.dim(1);
  Tensor<T> out({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out.at(j, i) = in.at(i, j);
  const std::size_t ix = x.id;
  return x.tape->record(std::move(out), {ix}, [ix, r, c](Tape<T>& t, const Tensor<T>& g) {
    if (Tensor<T>* d = t.accumulate_grad(ix)) {
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) d->at(i, j) += g.at(j, i);
    }
  });
}

template <Real T>
Var<T> reshape(Var<T> x, Shape shape) {
  Tensor<T> out = x.value().reshaped(std::move(shape));
  const std::size_t ix = x.id;
  return x.tape->record(std::move(out), {ix}, [ix](Tape<T>& t, const Tensor<T>& g) {
    if (Tensor<T>* d = t.accumulate_grad(ix)) {
      for (std::size_t i = 0; i < g.numel(); ++i) (*d)[i] += g[i];
    }
  });
}

template <Real T>
Var<T> slice_last(Var<T> x, std::size_t offset, std::size_t length) {
  const Tensor<T>& in = x.value();
  const std::size_t width = in.last_dim();
  if (length == 0 || offset + length > width) {
    throw ShapeError("slice_last: columns [" + std::to_string(offset) + ", " + std::to_string(offset + length) +
                     ") out of range for " + shape_str(in.shape()));
  }
  Shape shape = in.shape();
  shape.back() = length;
  Tensor<T> out(shape);
  const std::size_t rows = in.numel() / width;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < length; ++j) out[r * length + j] = in[r * width + offset + j];
  const std::size_t ix = x.id;
  return x.tape->record(std::move(out), {ix}, [ix, rows, width, offset, length](Tape<T>& t, const Tensor<T>& g) {
    if (Tensor<T>* d = t.accumulate_grad(ix)) {
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < length; ++j) (*d)[r * width + offset + j] += g[r * length + j];
    }
  });
}

template <Real T>
Var<T> slice_rows(Var<T> x, std::size_t offset, std::size_t count) {
  const Tensor<T>& in = x.value();
  require_rank2(in, "slice_rows");
  if (count == 0 || offset + count > in.dim(0)) {
    throw ShapeError("slice_rows: rows [" + std::to_string(offset) + ", " + std::to_string(offset + count) +
                     ") out of range for " + shape_str(in.shape()));
  }
  const std::size_t d = in.dim(1);
  const auto first = in.vec().begin() + static_cast<std::ptrdiff_t>(offset * d);
  Tensor<T> out({count, d}, std::vector<T>(first, first + static_cast<std::ptrdiff_t>(count * d)));
  const std::size_t ix = x.id;
  return x.tape->record(std::move(out), {ix}, [ix, offset, d](Tape<T>& t, const Tensor<T>& g) {
    if (Tensor<T>* dx = t.accumulate_grad(ix)) {
      for (std::size_t i = 0; i < g.numel(); ++i) (*dx)[offset * d + i] += g[i];
    }
  });
}

template <Real T>
Var<T> concat_last(std::span<const Var<T>> parts) {
  if (parts.empty()) throw ShapeError("concat_last: no inputs");
  Tape<T>& tape = *parts.front().tape;
  Shape lead = parts.front().shape();
  lead.pop_back();
  std::size_t total = 0;
  std::vector<std::size_t> ids, widths;
  for (const Var<T>& p : parts) {
    same_tape(parts.front(), p, "concat_last");
    Shape s = p.shape();
    widths.push_back(s.back());
    s.pop_back();
    if (s != lead) {
      throw ShapeError("concat_last: leading dimensions differ: " + shape_str(parts.front().shape()) + " vs " +
                       shape_str(p.shape()));
    }
    total += widths.back();
    ids.push_back(p.id);
  }
  Shape shape = lead;
  shape.push_back(total);
  Tensor<T> out(shape);
  const std::size_t rows = out.numel() / total;
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor<T>& in = parts[k].value();
    const std::size_t w = widths[k];
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < w; ++j) out[r * total + offset + j] = in[r * w + j];
    offset += w;
  }
  return tape.record(std::move(out), ids, [ids, widths, rows, total](Tape<T>& t, const Tensor<T>& g) {
    std::size_t offset = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      const std::size_t w = widths[k];
      if (Tensor<T>* d = t.accumulate_grad(ids[k])) {
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < w; ++j) (*d)[r * w + j] += g[r * total + offset + j];
      }
      offset += w;
    }
  });
}

template <Real T>
std::pair<Var<T>, Var<T>> split_half_last(Var<T> x) {
  const std::size_t width = x.value().last_dim();
  if (width % 2 != 0) {
    throw ShapeError("split_half_last: last dimension must be even, got " + shape_str(x.shape()));
  }
  const std::size_t half = width / 2;
  return {slice_last(x, 0, half), slice_last(x, half, half)};
}

template <Real T>
Var<T> sum(Var<T> x) {
  T acc{0};
  for (T v : x.value().data()) acc += v;
  const std::size_t ix = x.id;
  return x.tape->record(Tensor<T>::scalar(acc), {ix}, [ix](Tape<T>& t, const Tensor<T>& g) {
    if (Tensor<T>* d = t.accumulate_grad(ix)) {
      for (T& v : d->data()) v += g[0];
    }
  });
}

template <Real T>
Var<T> mean(Var<T> x) {
  return scale(sum(x), T{1} / static_cast<T>(x.value().numel()));
}

template <Real T>
Var<T> mean_rows(Var<T> x) {
  const Tensor<T>& in = x.value();
  require_rank2(in, "mean_rows");
  const std::size_t n = in.dim(0), d = in.dim(1);
  Tensor<T> out({1, d});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out[j] += in.at(i, j);
  const T inv = T{1} / static_cast<T>(n);
  for (T& v : out.data()) v *= inv;
  const std::size_t ix = x.id;
  return x.tape->record(std::move(out), {ix}, [ix, n, d, inv](Tape<T>& t, const Tensor<T>& g) {
    if (Tensor<T>* dx = t.accumulate_grad(ix)) {
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) dx->at(i, j) += g[j] * inv;
    }
  });
}

template <Real T>
Var<T> gather_rows(Var<T> table, std::span<const int> ids) {
  const Tensor<T>& tab = table.value();
  require_rank2(tab, "gather_rows");
  const std::size_t vocab = tab.dim(0), d = tab.dim(1);
  if (ids.empty()) throw ShapeError("gather_rows: empty index list");
  std::vector<int> rows(ids.begin(), ids.end());
  Tensor<T> out({rows.size(), d});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || static_cast<std::size_t>(rows[i]) >= vocab) {
      throw std::out_of_range("gather_rows: index " + std::to_string(rows[i]) + " outside table of " +
                              std::to_string(vocab) + " rows");
    }
    for (std::size_t j = 0; j < d; ++j) out.at(i, j) = tab.at(static_cast<std::size_t>(rows[i]), j);
  }
  const std::size_t it = table.id;
  return table.tape->record(std::move(out), {it}, [it, rows, d](Tape<T>& t, const Tensor<T>& g) {
    if (Tensor<T>* dt = t.accumulate_grad(it)) {
      for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < d; ++j) dt->at(static_cast<std::size_t>(rows[i]), j) += g.at(i, j);
    }
  });
}

template <Real T>
void softmax_row(std::span<const T> in, std::span<T> out) {
  T mx = in[0];
  for (T v : in) mx = std::max(mx, v);
  T total{0};
  for (std::size_t j = 0; j < in.size(); ++j) {
    out[j] = std::exp(in[j] - mx);
    total += out[j];
  }
  for (T& v : out) v /= total;
}

template <Real T>
Var<T> softmax_last(Var<T> x, const Tensor<T>* mask) {
  const Tensor<T>& in = x.value();
  const std::size_t width = in.last_dim();
  const std::size_t rows = in.numel() / width;
  std::size_t mask_rows = 0;
  if (mask) {
    const Shape& ms = mask->shape();
    const Shape& xs = in.shape();
    if (ms.size() > xs.size() || !std::equal(ms.begin(), ms.end(), xs.end() - static_cast<std::ptrdiff_t>(ms.size()))) {
      throw ShapeError("softmax_last: mask " + shape_str(ms) + " does not broadcast to " + shape_str(xs));
    }
    mask_rows = mask->numel() / width;
  }

  constexpr T kThreshold = static_cast<T>(kMaskSentinel / 2);
  Tensor<T> out(in.shape());
  std::vector<T> shifted(width);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* src = in.data().data() + r * width;
    const T* m = mask ? mask->data().data() + (r % mask_rows) * width : nullptr;
    bool any_open = (m == nullptr);
    for (std::size_t j = 0; j < width; ++j) {
      shifted[j] = src[j];
      if (m) {
        shifted[j] += m[j];
        any_open = any_open || m[j] > kThreshold;
      }
    }
    if (!any_open) throw NumericError("softmax_last: row " + std::to_string(r) + " is fully masked");
    softmax_row<T>(shifted, out.data().subspan(r * width, width));
  }

  const std::size_t ix = x.id;
  // record() appends exactly one node, so the output's id is known up front.
  Tape<T>& tape = *x.tape;
  const std::size_t iy = tape.size();
  return tape.record(std::move(out), {ix}, [ix, rows, width, iy](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T>* d = t.accumulate_grad(ix);
    if (!d) return;
    const Tensor<T>& Y = t.value(iy);
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t base = r * width;
      T dot{0};
      for (std::size_t j = 0; j < width; ++j) dot += g[base + j] * Y[base + j];
      for (std::size_t j = 0; j < width; ++j) (*d)[base + j] += Y[base + j] * (g[base + j] - dot);
    }
  });
}

#define GLUA_INSTANTIATE_OPS(T)                                                  \
  template T sigmoid_scalar<T>(T);                                               \
  template T silu_scalar<T>(T);                                                  \
  template T silu_grad_scalar<T>(T);                                             \
  template Var<T> matmul<T>(Var<T>, Var<T>);                                     \
  template Var<T> add<T>(Var<T>, Var<T>);                                        \
  template Var<T> sub<T>(Var<T>, Var<T>);                                        \
  template Var<T> mul<T>(Var<T>, Var<T>);                                        \
  template Var<T> scale<T>(Var<T>, T);                                           \
  template Var<T> activation<T>(Activation, Var<T>);                             \
  template Var<T> transpose<T>(Var<T>);                                          \
  template Var<T> reshape<T>(Var<T>, Shape);                                     \
  template Var<T> slice_last<T>(Var<T>, std::size_t, std::size_t);               \
  template Var<T> slice_rows<T>(Var<T>, std::size_t, std::size_t);               \
  template Var<T> concat_last<T>(std::span<const Var<T>>);                       \
  template std::pair<Var<T>, Var<T>> split_half_last<T>(Var<T>);                 \
  template Var<T> sum<T>(Var<T>);                                                \
  template Var<T> mean<T>(Var<T>);                                               \
  template Var<T> mean_rows<T>(Var<T>);                                          \
  template Var<T> gather_rows<T>(Var<T>, std::span<const int>);                  \
  template void softmax_row<T>(std::span<const T>, std::span<T>);                \
  template Var<T> softmax_last<T>(Var<T>, const Tensor<T>*);

GLUA_INSTANTIATE_OPS(float)
GLUA_INSTANTIATE_OPS(double)

}  // namespace glua
