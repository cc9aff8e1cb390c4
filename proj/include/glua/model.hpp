#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <variant>
#include <vector>

#include "glua/attention.hpp"
#include "glua/nn.hpp"

namespace glua {

struct ClassifyTask {
  std::size_t n_classes = 10;
  std::size_t n_patches = 64;
  std::size_t patch_dim = 48;
};

struct LmTask {
  std::size_t vocab = 256;
  std::size_t context = 16;
};

struct ModelConfig {
  std::size_t n_layers = 6;
  std::size_t d_model = 384;
  std::size_t n_heads = 8;
  std::size_t ffn_hidden = 1024;
  Variant variant = Variant::baseline;
  bool final_norm = false;
  std::variant<ClassifyTask, LmTask> task = ClassifyTask{};

  bool is_lm() const { return std::holds_alternative<LmTask>(task); }
  AttentionConfig attention() const { return AttentionConfig::make(d_model, n_heads, variant); }
  /// Throws std::invalid_argument describing the first violated constraint.
  void validate() const;
};

/// Pre-norm residual layer: x + Attn(LN(x)), then x + FFN(LN(x)).
template <Real T>
class Block {
 public:
  Block(const std::string& name, const ModelConfig& cfg, std::uint64_t seed);

  Var<T> forward(Tape<T>& tape, Var<T> x, const Tensor<T>* mask = nullptr, AttentionTrace<T>* trace = nullptr);

  MultiHeadAttention<T>& attention() { return attn_; }
  GluFfn<T>& ffn() { return ffn_; }
  void collect(ParamList<T>& out);

 private:
  LayerNorm<T> ln1_;
  MultiHeadAttention<T> attn_;
  LayerNorm<T> ln2_;
  GluFfn<T> ffn_;
};

/// Transformer for either task. Classification: linear patch embedding plus
/// learned positions, blocks, mean-pool, linear head. Language model: token
/// plus learned positional embedding, causally masked blocks, untied head.
template <Real T>
class Model {
 public:
  Model(const ModelConfig& cfg, std::uint64_t seed);

  /// patches: [n_patches x patch_dim] -> logits [1 x n_classes]
  Var<T> classifier_forward(Tape<T>& tape, const Tensor<T>& patches, AttentionTrace<T>* trace = nullptr);
  /// tokens: T <= context ids -> logits [T x vocab]
  Var<T> lm_forward(Tape<T>& tape, std::span<const int> tokens, AttentionTrace<T>* trace = nullptr);

  const ModelConfig& config() const { return cfg_; }
  /// Every trainable parameter in a fixed order.
  const ParamList<T>& parameters() const { return params_; }
  std::size_t parameter_count() const;
  std::vector<Block<T>>& blocks() { return blocks_; }
  Linear<T>& head() { return head_; }
  Parameter<T>& positional() { return pos_embed_; }

  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

 private:
  Var<T> run_blocks(Tape<T>& tape, Var<T> x, const Tensor<T>* mask, AttentionTrace<T>* trace);

  ModelConfig cfg_;
  std::optional<Linear<T>> patch_embed_;
  std::optional<Embedding<T>> token_embed_;
  Parameter<T> pos_embed_;
  std::vector<Block<T>> blocks_;
  std::optional<LayerNorm<T>> final_norm_;
  Linear<T> head_;
  ParamList<T> params_;
};

/// Copies parameter values between models with matching configs, converting
/// precision as needed.
template <Real From, Real To>
void copy_weights(const Model<From>& src, Model<To>& dst);

extern template class Block<float>;
extern template class Block<double>;
extern template class Model<float>;
extern template class Model<double>;

}  // namespace glua
