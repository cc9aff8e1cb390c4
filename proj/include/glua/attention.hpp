#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "glua/nn.hpp"

namespace glua {

enum class Variant { baseline, glu };

std::string_view to_string(Variant v);
Variant parse_variant(std::string_view text);

struct MatchedDims {
  std::size_t v_proj_out;
  std::size_t attn_inner;
};

/// Value/output widths that give the GLU variant the same {W_V, W_O} weight
/// count as baseline: d*v + (v/2)*d = 2*d*d gives v = 4d/3, inner = 2d/3.
/// Requires d divisible by 3 and 2d/3 divisible by n_heads.
MatchedDims matched_dims(std::size_t d_model, std::size_t n_heads);

/// Projection shapes for one attention layer.
///
/// Queries and keys always use head width d_model / n_heads. The value path
/// is d_model wide for baseline; for GLU the value projection is 4d/3 wide
/// and the gated result is 2d/3, split into per_head_v columns per head.
struct AttentionConfig {
  std::size_t d_model = 0;
  std::size_t n_heads = 0;
  Variant variant = Variant::baseline;
  std::size_t v_proj_out = 0;
  std::size_t attn_inner = 0;
  std::size_t per_head_v = 0;

  static AttentionConfig make(std::size_t d_model, std::size_t n_heads, Variant variant);
  std::size_t head_dim() const { return d_model / n_heads; }
};

/// Weight count of W_Q, W_K, W_V, W_O.
std::size_t param_count(const AttentionConfig& cfg);

/// [n x n] additive mask: 0 where j <= i, kMaskSentinel where j > i.
template <Real T>
Tensor<T> causal_mask(std::size_t n);

template <Real T>
struct AttentionWeights {
  Var<T> w_q;  // [d x d]
  Var<T> w_k;  // [d x d]
  Var<T> w_v;  // [d x v_proj_out]
  Var<T> w_o;  // [attn_inner x d]
};

/// Receives the per-head attention probabilities ([n x m] each) when passed.
template <Real T>
using AttentionTrace = std::vector<Tensor<T>>;

/// Standard multi-head attention. q: [n x d], k and v: [m x d].
template <Real T>
Var<T> mha_forward(const AttentionConfig& cfg, const AttentionWeights<T>& w, Var<T> q, Var<T> k, Var<T> v,
                   const Tensor<T>* mask = nullptr, AttentionTrace<T>* trace = nullptr);

/// Multi-head attention whose projected values pass through a packed GLU
/// before the head split.
template <Real T>
Var<T> glu_mha_forward(const AttentionConfig& cfg, const AttentionWeights<T>& w, Var<T> q, Var<T> k, Var<T> v,
                       const Tensor<T>* mask = nullptr, AttentionTrace<T>* trace = nullptr);

/// Dispatches on cfg.variant.
template <Real T>
Var<T> attention_forward(const AttentionConfig& cfg, const AttentionWeights<T>& w, Var<T> q, Var<T> k, Var<T> v,
                         const Tensor<T>* mask = nullptr, AttentionTrace<T>* trace = nullptr);

/// Self-attention layer owning its four projections.
template <Real T>
class MultiHeadAttention {
 public:
  MultiHeadAttention(const std::string& name, const AttentionConfig& cfg, std::uint64_t seed);

  Var<T> forward(Tape<T>& tape, Var<T> x, const Tensor<T>* mask = nullptr, AttentionTrace<T>* trace = nullptr);

  const AttentionConfig& config() const { return cfg_; }
  Linear<T>& w_q() { return w_q_; }
  Linear<T>& w_k() { return w_k_; }
  Linear<T>& w_v() { return w_v_; }
  Linear<T>& w_o() { return w_o_; }
  void collect(ParamList<T>& out);

 private:
  AttentionConfig cfg_;
  Linear<T> w_q_;
  Linear<T> w_k_;
  Linear<T> w_v_;
  Linear<T> w_o_;
};

extern template class MultiHeadAttention<float>;
extern template class MultiHeadAttention<double>;

}  // namespace glua
