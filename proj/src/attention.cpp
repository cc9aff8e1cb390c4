#include "glua/attention.hpp"

#include <cmath>
#include <stdexcept>

#include "glua/rng.hpp"

namespace glua {

std::string_view to_string(Variant v) { return v == Variant::glu ? "glu" : "baseline"; }

Variant parse_variant(std::string_view text) {
  if (text == "baseline") return Variant::baseline;
  if (text == "glu") return Variant::glu;
  throw std::invalid_argument("unknown attention variant '" + std::string(text) + "' (expected baseline or glu)");
}

MatchedDims matched_dims(std::size_t d_model, std::size_t n_heads) {
  if (n_heads == 0) throw std::invalid_argument("matched_dims: n_heads must be positive");
  if (d_model == 0 || d_model % 3 != 0) {
    throw std::invalid_argument("matched_dims: d_model=" + std::to_string(d_model) +
                                " is not divisible by 3; the GLU value projection must be 4*d/3 wide "
                                "(gated to 2*d/3) so that d*(4d/3) + (2d/3)*d equals the baseline 2*d*d");
  }
  const std::size_t inner = 2 * d_model / 3;
  if (inner % n_heads != 0) {
    throw std::invalid_argument("matched_dims: gated value width 2*d/3=" + std::to_string(inner) +
                                " is not divisible by n_heads=" + std::to_string(n_heads) +
                                "; the 4d/3 rule needs 2d/3 to split evenly across heads");
  }
  return {4 * d_model / 3, inner};
}

AttentionConfig AttentionConfig::make(std::size_t d_model, std::size_t n_heads, Variant variant) {
  if (n_heads == 0 || d_model == 0 || d_model % n_heads != 0) {
    throw std::invalid_argument("attention: d_model=" + std::to_string(d_model) +
                                " must be a positive multiple of n_heads=" + std::to_string(n_heads));
  }
  AttentionConfig cfg;
  cfg.d_model = d_model;
  cfg.n_heads = n_heads;
  cfg.variant = variant;
  if (variant == Variant::baseline) {
    cfg.v_proj_out = d_model;
    cfg.attn_inner = d_model;
  } else {
    const MatchedDims dims = matched_dims(d_model, n_heads);
    cfg.v_proj_out = dims.v_proj_out;
    cfg.attn_inner = dims.attn_inner;
  }
  cfg.per_head_v = cfg.attn_inner / n_heads;
  return cfg;
}

std::size_t param_count(const AttentionConfig& cfg) {
  const std::size_t d = cfg.d_model;
  return d * d + d * d + d * cfg.v_proj_out + cfg.attn_inner * d;
}

template <Real T>
Tensor<T> causal_mask(std::size_t n) {
  if (n == 0) throw std::invalid_argument("causal_mask: n must be at least 1");
  Tensor<T> mask({n, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) mask.at(i, j) = static_cast<T>(kMaskSentinel);
  return mask;
}

namespace {

void expect_shape(const Shape& got, const Shape& want, const char* what) {
  if (got != want) {
    throw ShapeError(std::string("attention: ") + what + " has shape " + shape_str(got) + ", expected " +
                     shape_str(want));
  }
}

template <Real T>
void validate(const AttentionConfig& cfg, const AttentionWeights<T>& w, Var<T> q, Var<T> k, Var<T> v,
              const Tensor<T>* mask) {
  const std::size_t d = cfg.d_model;
  expect_shape(w.w_q.shape(), {d, d}, "W_Q");
  expect_shape(w.w_k.shape(), {d, d}, "W_K");
  expect_shape(w.w_v.shape(), {d, cfg.v_proj_out}, "W_V");
  expect_shape(w.w_o.shape(), {cfg.attn_inner, d}, "W_O");
  if (q.shape().size() != 2 || q.shape()[1] != d) throw ShapeError("attention: queries must be [n x " + std::to_string(d) + "], got " + shape_str(q.shape()));
  if (k.shape().size() != 2 || k.shape()[1] != d) throw ShapeError("attention: keys must be [m x " + std::to_string(d) + "], got " + shape_str(k.shape()));
  expect_shape(v.shape(), k.shape(), "values");
  if (mask) expect_shape(mask->shape(), {q.shape()[0], k.shape()[0]}, "mask");
}

// Scaled dot-product attention per head over already-projected inputs,
// followed by head concatenation and the output projection.
template <Real T>
Var<T> attend(const AttentionConfig& cfg, const AttentionWeights<T>& w, Var<T> qp, Var<T> kp, Var<T> vp,
              const Tensor<T>* mask, AttentionTrace<T>* trace) {
  const std::size_t dk = cfg.head_dim();
  const std::size_t dv = cfg.per_head_v;
  const T inv_sqrt_dk = T{1} / std::sqrt(static_cast<T>(dk));
  std::vector<Var<T>> heads;
  heads.reserve(cfg.n_heads);
  for (std::size_t h = 0; h < cfg.n_heads; ++h) {
    Var<T> qh = slice_last(qp, h * dk, dk);
    Var<T> kh = slice_last(kp, h * dk, dk);
    Var<T> vh = slice_last(vp, h * dv, dv);
    Var<T> scores = scale(matmul(qh, transpose(kh)), inv_sqrt_dk);
    Var<T> probs = softmax_last(scores, mask);
    if (trace) trace->push_back(probs.value());
    heads.push_back(matmul(probs, vh));
  }
  Var<T> merged = heads.size() == 1 ? heads.front() : concat_last<T>(heads);
  return matmul(merged, w.w_o);
}

}  // namespace

template <Real T>
Var<T> mha_forward(const AttentionConfig& cfg, const AttentionWeights<T>& w, Var<T> q, Var<T> k, Var<T> v,
                   const Tensor<T>* mask, AttentionTrace<T>* trace) {
  if (cfg.variant != Variant::baseline) throw std::invalid_argument("mha_forward: config is not the baseline variant");
  validate(cfg, w, q, k, v, mask);
  return attend(cfg, w, matmul(q, w.w_q), matmul(k, w.w_k), matmul(v, w.w_v), mask, trace);
}

template <Real T>
Var<T> glu_mha_forward(const AttentionConfig& cfg, const AttentionWeights<T>& w, Var<T> q, Var<T> k, Var<T> v,
                       const Tensor<T>* mask, AttentionTrace<T>* trace) {
  if (cfg.variant != Variant::glu) throw std::invalid_argument("glu_mha_forward: config is not the glu variant");
  validate(cfg, w, q, k, v, mask);
  Var<T> gated = glu_packed(matmul(v, w.w_v));
  return attend(cfg, w, matmul(q, w.w_q), matmul(k, w.w_k), gated, mask, trace);
}

template <Real T>
Var<T> attention_forward(const AttentionConfig& cfg, const AttentionWeights<T>& w, Var<T> q, Var<T> k, Var<T> v,
                         const Tensor<T>* mask, AttentionTrace<T>* trace) {
  return cfg.variant == Variant::glu ? glu_mha_forward(cfg, w, q, k, v, mask, trace)
                                     : mha_forward(cfg, w, q, k, v, mask, trace);
}

template <Real T>
MultiHeadAttention<T>::MultiHeadAttention(const std::string& name, const AttentionConfig& cfg, std::uint64_t seed)
    : cfg_(cfg),
      w_q_(name + ".w_q", cfg.d_model, cfg.d_model, seed),
      w_k_(name + ".w_k", cfg.d_model, cfg.d_model, seed),
      // Value/output matrices differ in shape between variants, so each
      // variant draws them from its own stream.
      w_v_(name + ".w_v", cfg.d_model, cfg.v_proj_out, derive_seed(seed, to_string(cfg.variant))),
      w_o_(name + ".w_o", cfg.attn_inner, cfg.d_model, derive_seed(seed, to_string(cfg.variant))) {}

template <Real T>
Var<T> MultiHeadAttention<T>::forward(Tape<T>& tape, Var<T> x, const Tensor<T>* mask, AttentionTrace<T>* trace) {
  AttentionWeights<T> w{tape.param(w_q_.weight()), tape.param(w_k_.weight()), tape.param(w_v_.weight()),
                        tape.param(w_o_.weight())};
  return attention_forward(cfg_, w, x, x, x, mask, trace);
}

template <Real T>
void MultiHeadAttention<T>::collect(ParamList<T>& out) {
  w_q_.collect(out);
  w_k_.collect(out);
  w_v_.collect(out);
  w_o_.collect(out);
}

#define GLUA_INSTANTIATE_ATTENTION(T)                                                                       \
  template Tensor<T> causal_mask<T>(std::size_t);                                                           \
  template Var<T> mha_forward<T>(const AttentionConfig&, const AttentionWeights<T>&, Var<T>, Var<T>, Var<T>, \
                                 const Tensor<T>*, AttentionTrace<T>*);                                     \
  template Var<T> glu_mha_forward<T>(const AttentionConfig&, const AttentionWeights<T>&, Var<T>, Var<T>,     \
                                     Var<T>, const Tensor<T>*, AttentionTrace<T>*);                         \
  template Var<T> attention_forward<T>(const AttentionConfig&, const AttentionWeights<T>&, Var<T>, Var<T>,   \
                                       Var<T>, const Tensor<T>*, AttentionTrace<T>*);                       \
  template class MultiHeadAttention<T>;

GLUA_INSTANTIATE_ATTENTION(float)
GLUA_INSTANTIATE_ATTENTION(double)

}  // namespace glua
