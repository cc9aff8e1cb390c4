#include "glua/train.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace glua {

void TrainConfig::validate() const {
  if (!(lr_min <= lr_max)) throw std::invalid_argument("train: lr_min must not exceed lr_max");
  if (lr_min < 0.0) throw std::invalid_argument("train: learning rates must be non-negative");
  if (batch_size == 0) throw std::invalid_argument("train: batch_size must be at least 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw std::invalid_argument("train: betas must lie in [0, 1)");
  }
  if (!(eps > 0.0)) throw std::invalid_argument("train: eps must be positive");
  if (weight_decay < 0.0) throw std::invalid_argument("train: weight_decay must be non-negative");
  if (grad_clip && !(*grad_clip > 0.0)) throw std::invalid_argument("train: grad_clip must be positive");
}

DivergenceError::DivergenceError(std::size_t step, double loss)
    : NumericError("training diverged at step " + std::to_string(step) + " (loss " + std::to_string(loss) + ")"),
      step_(step) {}

std::string_view to_string(Phase p) {
  switch (p) {
    case Phase::train: return "train";
    case Phase::val: return "val";
    case Phase::summary: return "summary";
  }
  return "train";
}

template <Real T>
Var<T> cross_entropy(Var<T> logits, std::span<const int> targets) {
  const Tensor<T>& z = logits.value();
  if (z.rank() != 2 || z.dim(0) != targets.size()) {
    throw ShapeError("cross_entropy: logits " + shape_str(z.shape()) + " do not match " +
                     std::to_string(targets.size()) + " targets");
  }
  const std::size_t n = z.dim(0), C = z.dim(1);
  std::vector<int> tgt(targets.begin(), targets.end());
  for (int t : tgt) {
    if (t < 0 || static_cast<std::size_t>(t) >= C) {
      throw std::out_of_range("cross_entropy: target " + std::to_string(t) + " outside " + std::to_string(C) +
                              " classes");
    }
  }
  Tensor<T> probs({n, C});
  T total{0};
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = z.data().subspan(i * C, C);
    const T mx = *std::max_element(row.begin(), row.end());
    T s{0};
    for (T v : row) s += std::exp(v - mx);
    const T lse = mx + std::log(s);
    total += lse - row[static_cast<std::size_t>(tgt[i])];
    for (std::size_t j = 0; j < C; ++j) probs.at(i, j) = std::exp(row[j] - lse);
  }
  const T inv_n = T{1} / static_cast<T>(n);
  const std::size_t iz = logits.id;
  return logits.tape->record(
      Tensor<T>::scalar(total * inv_n), {iz},
      [iz, n, C, inv_n, tgt = std::move(tgt), probs = std::move(probs)](Tape<T>& t, const Tensor<T>& g) {
        Tensor<T>* dz = t.accumulate_grad(iz);
        if (!dz) return;
        const T scale = g[0] * inv_n;
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = 0; j < C; ++j) {
            const T onehot = static_cast<std::size_t>(tgt[i]) == j ? T{1} : T{0};
            dz->at(i, j) += scale * (probs.at(i, j) - onehot);
          }
        }
      });
}

template <Real T>
void adamw_step(OptimizerState<T>& state, std::span<Parameter<T>* const> params, double lr,
                const TrainConfig& cfg) {
  for (const Parameter<T>* p : params) {
    for (T g : p->grad.data()) {
      if (!std::isfinite(g)) throw NumericError("adamw_step: non-finite gradient in '" + p->name + "'");
    }
  }
  if (state.m.empty()) {
    for (const Parameter<T>* p : params) {
      state.m.push_back(Tensor<T>::zeros(p->value.shape()));
      state.v.push_back(Tensor<T>::zeros(p->value.shape()));
    }
  }
  if (state.m.size() != params.size()) throw std::invalid_argument("adamw_step: optimizer state does not match params");

  ++state.step;
  const double t = static_cast<double>(state.step);
  const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
  const T bc1 = static_cast<T>(1.0 - std::pow(cfg.beta1, t));
  const T bc2 = static_cast<T>(1.0 - std::pow(cfg.beta2, t));
  const T step_lr = static_cast<T>(lr);
  const T eps = static_cast<T>(cfg.eps);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter<T>& p = *params[k];
    const T decay = p.decay ? static_cast<T>(lr * cfg.weight_decay) : T{0};
    auto theta = p.value.data();
    auto grad = p.grad.data();
    auto m = state.m[k].data();
    auto v = state.v[k].data();
    for (std::size_t i = 0; i < theta.size(); ++i) {
      m[i] = b1 * m[i] + (T{1} - b1) * grad[i];
      v[i] = b2 * v[i] + (T{1} - b2) * grad[i] * grad[i];
      const T m_hat = m[i] / bc1;
      const T v_hat = v[i] / bc2;
      theta[i] = theta[i] - step_lr * m_hat / (std::sqrt(v_hat) + eps) - decay * theta[i];
    }
  }
}

double cosine_lr(const TrainConfig& cfg, std::size_t t) {
  if (cfg.total_steps == 0) throw std::invalid_argument("cosine_lr: total_steps must be at least 1");
  if (t > cfg.total_steps) {
    throw std::out_of_range("cosine_lr: step " + std::to_string(t) + " beyond total_steps " +
                            std::to_string(cfg.total_steps));
  }
  if (t == 0) return cfg.lr_max;
  if (t == cfg.total_steps) return cfg.lr_min;
  const double phase = std::numbers::pi * static_cast<double>(t) / static_cast<double>(cfg.total_steps);
  return cfg.lr_min + 0.5 * (cfg.lr_max - cfg.lr_min) * (1.0 + std::cos(phase));
}

template <Real T>
double clip_grad_norm(std::span<Parameter<T>* const> params, double max_norm) {
  double sq = 0.0;
  for (const Parameter<T>* p : params)
    for (T g : p->grad.data()) sq += static_cast<double>(g) * static_cast<double>(g);
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const T factor = static_cast<T>(max_norm / norm);
    for (Parameter<T>* p : params)
      for (T& g : p->grad.data()) g *= factor;
  }
  return norm;
}

template <Real T>
Var<T> example_logits(Model<T>& model, Tape<T>& tape, const data::Example& ex) {
  if (model.config().is_lm()) return model.lm_forward(tape, ex.tokens);
  const auto& task = std::get<ClassifyTask>(model.config().task);
  std::vector<T> feats(ex.features.begin(), ex.features.end());
  return model.classifier_forward(tape, Tensor<T>({task.n_patches, task.patch_dim}, std::move(feats)));
}

namespace {

// Number of argmax-correct rows; ties resolve to the lowest index.
template <Real T>
std::size_t count_correct(const Tensor<T>& logits, std::span<const int> targets) {
  const std::size_t C = logits.dim(1);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const auto row = logits.data().subspan(i * C, C);
    const auto best = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
    if (best == targets[i]) ++correct;
  }
  return correct;
}

}  // namespace

template <Real T>
EvalResult evaluate(Model<T>& model, const data::Dataset& dataset) {
  if (dataset.empty()) throw std::invalid_argument("evaluate: dataset is empty");
  double loss = 0.0;
  std::size_t correct = 0, total = 0;
  for (const data::Example& ex : dataset) {
    Tape<T> tape;
    Var<T> logits = example_logits(model, tape, ex);
    loss += static_cast<double>(cross_entropy(logits, ex.targets).value().item());
    correct += count_correct(logits.value(), ex.targets);
    total += ex.targets.size();
  }
  return {loss / static_cast<double>(dataset.size()), static_cast<double>(correct) / static_cast<double>(total)};
}

template <Real T>
History fit(Model<T>& model, const data::Dataset& train, const data::Dataset* validation, TrainConfig cfg) {
  cfg.validate();
  History history;
  if (cfg.epochs == 0) return history;
  if (train.empty()) throw std::invalid_argument("fit: training set is empty");

  const std::size_t steps_per_epoch = (train.size() + cfg.batch_size - 1) / cfg.batch_size;
  if (cfg.total_steps == 0) cfg.total_steps = cfg.epochs * steps_per_epoch;

  const ParamList<T>& params = model.parameters();
  OptimizerState<T> opt;
  std::size_t step = 0;
  double lr = cfg.lr_max;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (const auto& batch : data::batches(train.size(), cfg.batch_size, cfg.seed, epoch)) {
      zero_grads<T>(params);
      Tape<T> tape;
      std::optional<Var<T>> loss_sum;
      std::size_t correct = 0, total = 0;
      for (std::size_t idx : batch) {
        const data::Example& ex = train[idx];
        Var<T> logits = example_logits(model, tape, ex);
        Var<T> loss = cross_entropy(logits, ex.targets);
        correct += count_correct(logits.value(), ex.targets);
        total += ex.targets.size();
        loss_sum = loss_sum ? add(*loss_sum, loss) : loss;
      }
      Var<T> loss = scale(*loss_sum, T{1} / static_cast<T>(batch.size()));
      const double loss_value = static_cast<double>(loss.value().item());
      if (!std::isfinite(loss_value)) throw DivergenceError(step + 1, loss_value);

      tape.backward(loss);
      if (cfg.grad_clip) clip_grad_norm<T>(params, *cfg.grad_clip);
      lr = cosine_lr(cfg, std::min(step, cfg.total_steps));
      adamw_step<T>(opt, params, lr, cfg);
      ++step;
      history.push_back({epoch, step, Phase::train, loss_value,
                         static_cast<double>(correct) / static_cast<double>(total), lr});
    }
    if (validation && !validation->empty()) {
      const EvalResult r = evaluate(model, *validation);
      history.push_back({epoch, step, Phase::val, r.loss, r.accuracy, lr});
    }
  }
  return history;
}

#define GLUA_INSTANTIATE_TRAIN(T)                                                                         \
  template Var<T> cross_entropy<T>(Var<T>, std::span<const int>);                                         \
  template void adamw_step<T>(OptimizerState<T>&, std::span<Parameter<T>* const>, double, const TrainConfig&); \
  template double clip_grad_norm<T>(std::span<Parameter<T>* const>, double);                              \
  template Var<T> example_logits<T>(Model<T>&, Tape<T>&, const data::Example&);                           \
  template EvalResult evaluate<T>(Model<T>&, const data::Dataset&);                                       \
  template History fit<T>(Model<T>&, const data::Dataset&, const data::Dataset*, TrainConfig);

GLUA_INSTANTIATE_TRAIN(float)
GLUA_INSTANTIATE_TRAIN(double)

}  // namespace glua
