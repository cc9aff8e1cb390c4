#include "glua/nn.hpp"

#include <cmath>

#include "glua/rng.hpp"

namespace glua {

namespace {

template <Real T>
Tensor<T> uniform_init(const std::string& name, Shape shape, double bound, std::uint64_t seed) {
  Rng rng(derive_seed(seed, name));
  Tensor<T> t(std::move(shape));
  for (T& v : t.data()) v = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

template <Real T>
Tensor<T> normal_init(const std::string& name, Shape shape, double stddev, std::uint64_t seed) {
  Rng rng(derive_seed(seed, name));
  Tensor<T> t(std::move(shape));
  for (T& v : t.data()) v = static_cast<T>(rng.normal(0.0, stddev));
  return t;
}

}  // namespace

template <Real T>
Linear<T>::Linear(std::string name, std::size_t in, std::size_t out, std::uint64_t seed)
    : weight_(name, uniform_init<T>(name, {in, out}, 1.0 / std::sqrt(static_cast<double>(in)), seed)) {}

template <Real T>
Var<T> Linear<T>::forward(Tape<T>& tape, Var<T> x) {
  const Shape in_shape = x.shape();
  const std::size_t in = in_features();
  if (in_shape.back() != in) {
    throw ShapeError("linear '" + weight_.name + "': trailing dimension " + std::to_string(in_shape.back()) +
                     " does not match input width " + std::to_string(in));
  }
  Var<T> w = tape.param(weight_);
  if (in_shape.size() == 2) return matmul(x, w);
  const std::size_t rows = x.value().numel() / in;
  Var<T> y = matmul(reshape(x, {rows, in}), w);
  Shape out_shape = in_shape;
  out_shape.back() = out_features();
  return reshape(y, std::move(out_shape));
}

template <Real T>
Embedding<T>::Embedding(std::string name, std::size_t vocab, std::size_t dim, std::uint64_t seed)
    : table_(name, normal_init<T>(name, {vocab, dim}, 0.02, seed), /*decay=*/false) {}

template <Real T>
Var<T> Embedding<T>::forward(Tape<T>& tape, std::span<const int> ids) {
  return gather_rows(tape.param(table_), ids);
}

template <Real T>
LayerNorm<T>::LayerNorm(std::string name, std::size_t dim, T epsilon)
    : gain_(name + ".gain", Tensor<T>::full({dim}, T{1}), false),
      shift_(name + ".shift", Tensor<T>::zeros({dim}), false),
      epsilon_(epsilon) {}

template <Real T>
Var<T> LayerNorm<T>::forward(Tape<T>& tape, Var<T> x) {
  return layer_norm(x, tape.param(gain_), tape.param(shift_), epsilon_);
}

template <Real T>
Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> shift, T epsilon) {
  const Tensor<T>& in = x.value();
  const std::size_t d = in.last_dim();
  if (gain.value().numel() != d || shift.value().numel() != d) {
    throw ShapeError("layer_norm: parameters of width " + std::to_string(gain.value().numel()) +
                     " do not match trailing dimension of " + shape_str(in.shape()));
  }
  const std::size_t rows = in.numel() / d;
  const Tensor<T>& G = gain.value();
  const Tensor<T>& B = shift.value();
  Tensor<T> out(in.shape());
  // Normalized values and per-row inverse std, saved for backward.
  std::vector<T> xhat(in.numel());
  std::vector<T> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t base = r * d;
    T mu{0};
    for (std::size_t j = 0; j < d; ++j) mu += in[base + j];
    mu /= static_cast<T>(d);
    T var{0};
    for (std::size_t j = 0; j < d; ++j) {
      const T c = in[base + j] - mu;
      var += c * c;
    }
    var /= static_cast<T>(d);
    inv_std[r] = T{1} / std::sqrt(var + epsilon);
    for (std::size_t j = 0; j < d; ++j) {
      xhat[base + j] = (in[base + j] - mu) * inv_std[r];
      out[base + j] = xhat[base + j] * G[j] + B[j];
    }
  }
  const std::size_t ix = x.id, ig = gain.id, ib = shift.id;
  return x.tape->record(
      std::move(out), {ix, ig, ib},
      [ix, ig, ib, rows, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape<T>& t, const Tensor<T>& g) {
        const Tensor<T>& G = t.value(ig);
        if (Tensor<T>* dg = t.accumulate_grad(ig)) {
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < d; ++j) (*dg)[j] += g[r * d + j] * xhat[r * d + j];
        }
        if (Tensor<T>* db = t.accumulate_grad(ib)) {
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < d; ++j) (*db)[j] += g[r * d + j];
        }
        if (Tensor<T>* dx = t.accumulate_grad(ix)) {
          const T n = static_cast<T>(d);
          for (std::size_t r = 0; r < rows; ++r) {
            const std::size_t base = r * d;
            T sum_dxhat{0}, sum_dxhat_xhat{0};
            for (std::size_t j = 0; j < d; ++j) {
              const T dxh = g[base + j] * G[j];
              sum_dxhat += dxh;
              sum_dxhat_xhat += dxh * xhat[base + j];
            }
            for (std::size_t j = 0; j < d; ++j) {
              const T dxh = g[base + j] * G[j];
              (*dx)[base + j] += inv_std[r] / n * (n * dxh - sum_dxhat - xhat[base + j] * sum_dxhat_xhat);
            }
          }
        }
      });
}

template <Real T>
Var<T> glu(Var<T> x, Var<T> g) {
  if (x.shape() != g.shape()) {
    throw ShapeError("glu: value " + shape_str(x.shape()) + " and gate " + shape_str(g.shape()) + " differ");
  }
  return mul(x, silu(g));
}

template <Real T>
Var<T> glu_packed(Var<T> x) {
  auto [value, gate] = split_half_last(x);
  return glu(value, gate);
}

template <Real T>
GluFfn<T>::GluFfn(const std::string& name, std::size_t d_model, std::size_t hidden, std::uint64_t seed)
    : up_(name + ".up", d_model, 2 * hidden, seed), down_(name + ".down", hidden, d_model, seed) {}

template <Real T>
Var<T> GluFfn<T>::forward(Tape<T>& tape, Var<T> x) {
  return down_.forward(tape, glu_packed(up_.forward(tape, x)));
}

template class Linear<float>;
template class Linear<double>;
template class Embedding<float>;
template class Embedding<double>;
template class LayerNorm<float>;
template class LayerNorm<double>;
template class GluFfn<float>;
template class GluFfn<double>;

template Var<float> layer_norm<float>(Var<float>, Var<float>, Var<float>, float);
template Var<double> layer_norm<double>(Var<double>, Var<double>, Var<double>, double);
template Var<float> glu<float>(Var<float>, Var<float>);
template Var<double> glu<double>(Var<double>, Var<double>);
template Var<float> glu_packed<float>(Var<float>);
template Var<double> glu_packed<double>(Var<double>);

}  // namespace glua
