#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "glua/ops.hpp"
#include "glua/tape.hpp"

namespace glua {

template <Real T>
using ParamList = std::vector<Parameter<T>*>;

/// Bias-free projection x -> x W, with W of shape [in x out].
///
/// Weights are drawn from uniform(-1/sqrt(in), 1/sqrt(in)) using a stream
/// derived from (seed, name), so equally-named layers of equal shape are
/// initialized identically regardless of what else the model contains.
template <Real T>
class Linear {
 public:
  Linear(std::string name, std::size_t in, std::size_t out, std::uint64_t seed);

  /// x: [... x in] -> [... x out]
  Var<T> forward(Tape<T>& tape, Var<T> x);

  std::size_t in_features() const { return weight_.value.dim(0); }
  std::size_t out_features() const { return weight_.value.dim(1); }
  Parameter<T>& weight() { return weight_; }
  const Parameter<T>& weight() const { return weight_; }
  void collect(ParamList<T>& out) { out.push_back(&weight_); }

 private:
  Parameter<T> weight_;
};

/// Lookup table [vocab x d], initialized normal(0, 0.02). Excluded from
/// weight decay.
template <Real T>
class Embedding {
 public:
  Embedding(std::string name, std::size_t vocab, std::size_t dim, std::uint64_t seed);

  Var<T> forward(Tape<T>& tape, std::span<const int> ids);

  std::size_t vocab() const { return table_.value.dim(0); }
  Parameter<T>& table() { return table_; }
  void collect(ParamList<T>& out) { out.push_back(&table_); }

 private:
  Parameter<T> table_;
};

/// Normalizes each last-dimension slice to zero mean and unit variance
/// (epsilon inside the square root), then applies gain and shift.
template <Real T>
class LayerNorm {
 public:
  LayerNorm(std::string name, std::size_t dim, T epsilon = T(1e-5));

  Var<T> forward(Tape<T>& tape, Var<T> x);

  Parameter<T>& gain() { return gain_; }
  Parameter<T>& shift() { return shift_; }
  void collect(ParamList<T>& out) {
    out.push_back(&gain_);
    out.push_back(&shift_);
  }

 private:
  Parameter<T> gain_;
  Parameter<T> shift_;
  T epsilon_;
};

/// Layer normalization as a single taped op.
template <Real T>
Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> shift, T epsilon);

/// x * silu(g)
template <Real T>
Var<T> glu(Var<T> x, Var<T> g);

/// Splits the last dimension in half and gates the first half with the
/// second: output width is half the input width.
template <Real T>
Var<T> glu_packed(Var<T> x);

/// d -> 2h projection, packed GLU down to h, h -> d projection.
template <Real T>
class GluFfn {
 public:
  GluFfn(const std::string& name, std::size_t d_model, std::size_t hidden, std::uint64_t seed);

  Var<T> forward(Tape<T>& tape, Var<T> x);

  Linear<T>& up() { return up_; }
  Linear<T>& down() { return down_; }
  void collect(ParamList<T>& out) {
    up_.collect(out);
    down_.collect(out);
  }

 private:
  Linear<T> up_;
  Linear<T> down_;
};

extern template class Linear<float>;
extern template class Linear<double>;
extern template class Embedding<float>;
extern template class Embedding<double>;
extern template class LayerNorm<float>;
extern template class LayerNorm<double>;
extern template class GluFfn<float>;
extern template class GluFfn<double>;

}  // namespace glua
