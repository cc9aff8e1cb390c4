#include "glua/model.hpp"

#include <stdexcept>
#include <string>

namespace glua {

void ModelConfig::validate() const {
  if (n_layers == 0) throw std::invalid_argument("model: n_layers must be at least 1");
  if (ffn_hidden == 0) throw std::invalid_argument("model: ffn_hidden must be at least 1");
  (void)attention();  // throws on head/divisibility problems
  if (const auto* c = std::get_if<ClassifyTask>(&task)) {
    if (c->n_classes < 2) throw std::invalid_argument("model: n_classes must be at least 2");
    if (c->n_patches == 0 || c->patch_dim == 0) throw std::invalid_argument("model: empty patch geometry");
  } else {
    const auto& lm = std::get<LmTask>(task);
    if (lm.vocab < 2) throw std::invalid_argument("model: vocab must be at least 2");
    if (lm.context == 0) throw std::invalid_argument("model: context must be at least 1");
  }
}

template <Real T>
Block<T>::Block(const std::string& name, const ModelConfig& cfg, std::uint64_t seed)
    : ln1_(name + ".ln1", cfg.d_model),
      attn_(name + ".attn", cfg.attention(), seed),
      ln2_(name + ".ln2", cfg.d_model),
      ffn_(name + ".ffn", cfg.d_model, cfg.ffn_hidden, seed) {}

template <Real T>
Var<T> Block<T>::forward(Tape<T>& tape, Var<T> x, const Tensor<T>* mask, AttentionTrace<T>* trace) {
  x = add(x, attn_.forward(tape, ln1_.forward(tape, x), mask, trace));
  return add(x, ffn_.forward(tape, ln2_.forward(tape, x)));
}

template <Real T>
void Block<T>::collect(ParamList<T>& out) {
  ln1_.collect(out);
  attn_.collect(out);
  ln2_.collect(out);
  ffn_.collect(out);
}

namespace {

std::size_t positions(const ModelConfig& cfg) {
  if (const auto* c = std::get_if<ClassifyTask>(&cfg.task)) return c->n_patches;
  return std::get<LmTask>(cfg.task).context;
}

std::size_t outputs(const ModelConfig& cfg) {
  if (const auto* c = std::get_if<ClassifyTask>(&cfg.task)) return c->n_classes;
  return std::get<LmTask>(cfg.task).vocab;
}

const ModelConfig& validated(const ModelConfig& cfg) {
  cfg.validate();
  return cfg;
}

template <Real T>
Tensor<T> positional_init(std::size_t n, std::size_t d, std::uint64_t seed) {
  // Same recipe as Embedding tables.
  Embedding<T> tmp("pos_embed", n, d, seed);
  return tmp.table().value;
}

}  // namespace

template <Real T>
Model<T>::Model(const ModelConfig& cfg, std::uint64_t seed)
    : cfg_(validated(cfg)),
      pos_embed_("pos_embed", positional_init<T>(positions(cfg), cfg.d_model, seed), /*decay=*/false),
      head_("head", cfg.d_model, outputs(cfg), seed) {
  if (const auto* c = std::get_if<ClassifyTask>(&cfg_.task)) {
    patch_embed_.emplace("patch_embed", c->patch_dim, cfg_.d_model, seed);
    patch_embed_->collect(params_);
  } else {
    token_embed_.emplace("token_embed", std::get<LmTask>(cfg_.task).vocab, cfg_.d_model, seed);
    token_embed_->collect(params_);
  }
  params_.push_back(&pos_embed_);
  blocks_.reserve(cfg_.n_layers);
  for (std::size_t i = 0; i < cfg_.n_layers; ++i) blocks_.emplace_back("blocks." + std::to_string(i), cfg_, seed);
  for (Block<T>& b : blocks_) b.collect(params_);
  if (cfg_.final_norm) {
    final_norm_.emplace("final_norm", cfg_.d_model);
    final_norm_->collect(params_);
  }
  head_.collect(params_);
}

template <Real T>
std::size_t Model<T>::parameter_count() const {
  std::size_t n = 0;
  for (const Parameter<T>* p : params_) n += p->value.numel();
  return n;
}

template <Real T>
Var<T> Model<T>::run_blocks(Tape<T>& tape, Var<T> x, const Tensor<T>* mask, AttentionTrace<T>* trace) {
  for (Block<T>& b : blocks_) x = b.forward(tape, x, mask, trace);
  if (final_norm_) x = final_norm_->forward(tape, x);
  return x;
}

template <Real T>
Var<T> Model<T>::classifier_forward(Tape<T>& tape, const Tensor<T>& patches, AttentionTrace<T>* trace) {
  const auto* task = std::get_if<ClassifyTask>(&cfg_.task);
  if (!task) throw std::logic_error("classifier_forward called on a language model");
  if (patches.shape() != Shape{task->n_patches, task->patch_dim}) {
    throw ShapeError("classifier: patches have shape " + shape_str(patches.shape()) + ", expected " +
                     shape_str({task->n_patches, task->patch_dim}));
  }
  Var<T> x = patch_embed_->forward(tape, tape.constant(patches));
  x = add(x, tape.param(pos_embed_));
  x = run_blocks(tape, x, nullptr, trace);
  return head_.forward(tape, mean_rows(x));
}

template <Real T>
Var<T> Model<T>::lm_forward(Tape<T>& tape, std::span<const int> tokens, AttentionTrace<T>* trace) {
  const auto* task = std::get_if<LmTask>(&cfg_.task);
  if (!task) throw std::logic_error("lm_forward called on a classifier");
  const std::size_t n = tokens.size();
  if (n == 0 || n > task->context) {
    throw std::invalid_argument("lm: sequence length " + std::to_string(n) + " outside [1, " +
                                std::to_string(task->context) + "]");
  }
  for (int id : tokens) {
    if (id < 0 || static_cast<std::size_t>(id) >= task->vocab) {
      throw std::out_of_range("lm: token id " + std::to_string(id) + " outside vocab of " +
                              std::to_string(task->vocab));
    }
  }
  Var<T> x = token_embed_->forward(tape, tokens);
  Var<T> pos = tape.param(pos_embed_);
  if (n < task->context) pos = slice_rows(pos, 0, n);
  x = add(x, pos);
  const Tensor<T> mask = causal_mask<T>(n);
  x = run_blocks(tape, x, &mask, trace);
  return head_.forward(tape, x);
}

template <Real From, Real To>
void copy_weights(const Model<From>& src, Model<To>& dst) {
  const auto& from = src.parameters();
  const auto& to = dst.parameters();
  if (from.size() != to.size()) throw std::invalid_argument("copy_weights: models have different layouts");
  for (std::size_t i = 0; i < from.size(); ++i) {
    if (from[i]->name != to[i]->name || from[i]->value.shape() != to[i]->value.shape()) {
      throw std::invalid_argument("copy_weights: parameter '" + from[i]->name + "' does not match '" +
                                  to[i]->name + "'");
    }
    to[i]->value = from[i]->value.template cast<To>();
  }
}

template class Block<float>;
template class Block<double>;
template class Model<float>;
template class Model<double>;

template void copy_weights<float, float>(const Model<float>&, Model<float>&);
template void copy_weights<float, double>(const Model<float>&, Model<double>&);
template void copy_weights<double, float>(const Model<double>&, Model<float>&);
template void copy_weights<double, double>(const Model<double>&, Model<double>&);

}  // namespace glua
