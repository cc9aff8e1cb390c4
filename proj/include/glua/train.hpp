#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "glua/data.hpp"
#include "glua/model.hpp"

namespace glua {

struct TrainConfig {
  double lr_max = 1e-4;
  double lr_min = 0.0;
  /// 0 lets fit() derive epochs * steps_per_epoch.
  std::size_t total_steps = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  std::size_t batch_size = 384;
  std::size_t epochs = 20;
  std::uint64_t seed = 0;
  /// Global-norm gradient clipping threshold; disabled when unset.
  std::optional<double> grad_clip;

  void validate() const;
};

template <Real T>
struct OptimizerState {
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;
  std::uint64_t step = 0;
};

class DivergenceError : public NumericError {
 public:
  DivergenceError(std::size_t step, double loss);
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

/// Mean over rows of -log softmax(logits)[target], via log-sum-exp.
template <Real T>
Var<T> cross_entropy(Var<T> logits, std::span<const int> targets);

/// One decoupled-weight-decay Adam update using each parameter's grad.
/// Decay applies to the pre-update value and only to parameters with
/// decay == true. Rejects non-finite gradients before touching anything.
template <Real T>
void adamw_step(OptimizerState<T>& state, std::span<Parameter<T>* const> params, double lr,
                const TrainConfig& cfg);

/// lr_min + (lr_max - lr_min) * (1 + cos(pi * t / total_steps)) / 2
double cosine_lr(const TrainConfig& cfg, std::size_t t);

/// Scales all gradients so their joint L2 norm is at most max_norm; returns
/// the norm before clipping.
template <Real T>
double clip_grad_norm(std::span<Parameter<T>* const> params, double max_norm);

enum class Phase { train, val, summary };
std::string_view to_string(Phase p);

struct HistoryRecord {
  std::size_t epoch = 0;
  std::size_t step = 0;
  Phase phase = Phase::train;
  double loss = 0.0;
  double accuracy = 0.0;
  double lr = 0.0;

  friend bool operator==(const HistoryRecord&, const HistoryRecord&) = default;
};

using History = std::vector<HistoryRecord>;

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
};

/// Logits for one example: [1 x classes] or [T x vocab].
template <Real T>
Var<T> example_logits(Model<T>& model, Tape<T>& tape, const data::Example& ex);

/// Mean example loss and fraction of argmax-correct predictions (ties go to
/// the lowest class index).
template <Real T>
EvalResult evaluate(Model<T>& model, const data::Dataset& dataset);

/// Runs epochs of shuffled mini-batch AdamW with a per-step cosine schedule.
/// Emits one train record per optimizer step and, when `validation` is
/// given, one val record per epoch. Deterministic given cfg.seed and the
/// model's initial weights.
template <Real T>
History fit(Model<T>& model, const data::Dataset& train, const data::Dataset* validation, TrainConfig cfg);

}  // namespace glua
