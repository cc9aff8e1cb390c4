#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "glua/data.hpp"
#include "glua/grad_check.hpp"
#include "glua/model.hpp"
#include "glua/ops.hpp"
#include "glua/train.hpp"
#include "test_util.hpp"

using namespace glua;
using glua::testing::bitwise_equal;
using glua::testing::random_tensor;

namespace {

using D = double;

ModelConfig small_classifier(Variant v) {
  ModelConfig cfg;
  cfg.n_layers = 1;
  cfg.d_model = 12;
  cfg.n_heads = 2;
  cfg.ffn_hidden = 16;
  cfg.variant = v;
  cfg.task = ClassifyTask{4, 4, 48};
  return cfg;
}

data::Dataset small_images(std::size_t n, std::size_t classes = 4) {
  const auto images = data::synth_images(n, classes, 3);
  return data::classification_examples(images, 4);
}

TrainConfig quick_config(std::size_t epochs) {
  TrainConfig cfg;
  cfg.lr_max = 3e-3;
  cfg.batch_size = 8;
  cfg.epochs = epochs;
  cfg.seed = 2;
  return cfg;
}

}  // namespace

TEST(CrossEntropy, UniformLogitsGiveLogC) {
  Tape<D> t;
  const std::vector<int> targets{3, 7};
  auto loss = cross_entropy(t.constant(Tensor<D>({2, 10})), std::span<const int>(targets));
  EXPECT_NEAR(loss.value().item(), std::log(10.0), 1e-12);
  EXPECT_NEAR(std::log(10.0), 2.302585092994046, 1e-15);
}

TEST(CrossEntropy, SaturatedCorrectClass) {
  Tape<D> t;
  Tensor<D> z({1, 5});
  z[2] = 1e4;
  const std::vector<int> targets{2};
  EXPECT_NEAR(cross_entropy(t.constant(z), std::span<const int>(targets)).value().item(), 0.0, 1e-12);
}

TEST(CrossEntropy, TargetOutOfRange) {
  Tape<D> t;
  const std::vector<int> targets{5};
  EXPECT_THROW(cross_entropy(t.constant(Tensor<D>({1, 5})), std::span<const int>(targets)), std::out_of_range);
}

TEST(CrossEntropy, GradientIsSoftmaxMinusOneHot) {
  const Tensor<D> z = random_tensor({3, 4}, 1, -2.0, 2.0);
  const std::vector<int> targets{0, 3, 1};
  Tape<D> t;
  auto x = t.input(z);
  t.backward(cross_entropy(x, std::span<const int>(targets)));
  for (std::size_t i = 0; i < 3; ++i) {
    double mx = -INFINITY, s = 0;
    for (std::size_t j = 0; j < 4; ++j) mx = std::max(mx, z.at(i, j));
    for (std::size_t j = 0; j < 4; ++j) s += std::exp(z.at(i, j) - mx);
    for (std::size_t j = 0; j < 4; ++j) {
      const double p = std::exp(z.at(i, j) - mx) / s;
      const double expected = (p - (static_cast<int>(j) == targets[i] ? 1.0 : 0.0)) / 3.0;
      EXPECT_NEAR(t.grad(x).at(i, j), expected, 1e-15);
    }
  }
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    EXPECT_LT(grad_check([&](Tape<D>&, Var<D> v) { return cross_entropy(v, std::span<const int>(targets)); },
                         random_tensor({3, 4}, seed, -3.0, 3.0)),
              1e-4);
  }
}

TEST(AdamW, HandDerivedFirstStep) {
  Parameter<D> p("w", Tensor<D>::scalar(1.0));
  p.grad[0] = 0.5;
  std::vector<Parameter<D>*> ps{&p};
  TrainConfig cfg;
  cfg.weight_decay = 0.01;
  OptimizerState<D> state;
  adamw_step<D>(state, ps, 0.1, cfg);
  // At t = 1 the bias-corrected moments are g and g^2 exactly.
  const double m_hat = 0.5, v_hat = 0.25;
  const double expected = 1.0 - 0.1 * m_hat / (std::sqrt(v_hat) + 1e-8) - 0.1 * 0.01 * 1.0;
  EXPECT_NEAR(expected, 0.899000002, 1e-15);
  EXPECT_NEAR(p.value[0], expected, 1e-9);
  EXPECT_EQ(state.step, 1u);
}

TEST(AdamW, ZeroGradientZeroDecayIsNoOp) {
  Parameter<D> p("w", random_tensor({3, 2}, 1));
  std::vector<Parameter<D>*> ps{&p};
  TrainConfig cfg;
  cfg.weight_decay = 0.0;
  OptimizerState<D> state;
  const Tensor<D> before = p.value;
  for (int i = 0; i < 3; ++i) {
    adamw_step<D>(state, ps, 0.01, cfg);
    EXPECT_TRUE(bitwise_equal(p.value, before));
  }
  EXPECT_EQ(state.step, 3u);
  EXPECT_EQ(state.m[0].shape(), p.value.shape());
  EXPECT_EQ(state.v[0].shape(), p.value.shape());
}

TEST(AdamW, DecaySkipsExcludedParameters) {
  Parameter<D> decayed("w", Tensor<D>::scalar(2.0));
  Parameter<D> kept("ln.gain", Tensor<D>::scalar(2.0), false);
  std::vector<Parameter<D>*> ps{&decayed, &kept};
  TrainConfig cfg;
  cfg.weight_decay = 0.5;
  OptimizerState<D> state;
  adamw_step<D>(state, ps, 0.1, cfg);
  EXPECT_DOUBLE_EQ(decayed.value[0], 2.0 - 0.1 * 0.5 * 2.0);
  EXPECT_EQ(kept.value[0], 2.0);
}

TEST(AdamW, RejectsNonFiniteGradient) {
  Parameter<D> a("a", Tensor<D>::scalar(1.0));
  Parameter<D> b("blocks.0.ffn.up", Tensor<D>::scalar(1.0));
  b.grad[0] = NAN;
  std::vector<Parameter<D>*> ps{&a, &b};
  OptimizerState<D> state;
  try {
    adamw_step<D>(state, ps, 0.1, TrainConfig{});
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("blocks.0.ffn.up"), std::string::npos);
  }
  EXPECT_EQ(a.value[0], 1.0);
}

TEST(AdamW, RepeatableSteps) {
  auto run = [] {
    Parameter<D> p("w", random_tensor({4}, 1));
    std::vector<Parameter<D>*> ps{&p};
    OptimizerState<D> state;
    for (int i = 0; i < 5; ++i) {
      p.grad = random_tensor({4}, 10 + i);
      adamw_step<D>(state, ps, 0.05, TrainConfig{});
    }
    return std::make_pair(p.value, state.v[0]);
  };
  const auto a = run(), b = run();
  EXPECT_TRUE(bitwise_equal(a.first, b.first));
  EXPECT_TRUE(bitwise_equal(a.second, b.second));
}

TEST(CosineLr, EndpointsAndMidpoint) {
  TrainConfig cfg;
  cfg.lr_max = 3e-3;
  cfg.lr_min = 1e-5;
  cfg.total_steps = 300;
  EXPECT_EQ(cosine_lr(cfg, 0), cfg.lr_max);
  EXPECT_EQ(cosine_lr(cfg, 300), cfg.lr_min);
  EXPECT_NEAR(cosine_lr(cfg, 150), (cfg.lr_max + cfg.lr_min) / 2, 1e-18);
  EXPECT_THROW(cosine_lr(cfg, 301), std::out_of_range);
}

TEST(CosineLr, MonotoneNonIncreasing) {
  TrainConfig cfg;
  cfg.lr_max = 1e-4;
  cfg.total_steps = 977;
  for (std::size_t t = 1; t <= cfg.total_steps; ++t) ASSERT_LE(cosine_lr(cfg, t), cosine_lr(cfg, t - 1)) << t;
}

TEST(TrainConfig, Validation) {
  TrainConfig cfg;
  cfg.lr_min = 1.0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = TrainConfig{};
  cfg.batch_size = 0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

TEST(ClipGradNorm, ScalesToThreshold) {
  Parameter<D> a("a", Tensor<D>({2}));
  Parameter<D> b("b", Tensor<D>({1}));
  a.grad = Tensor<D>({2}, {3, 0});
  b.grad = Tensor<D>({1}, {4});
  std::vector<Parameter<D>*> ps{&a, &b};
  EXPECT_DOUBLE_EQ(clip_grad_norm<D>(ps, 1.0), 5.0);
  EXPECT_DOUBLE_EQ(a.grad[0], 0.6);
  EXPECT_DOUBLE_EQ(b.grad[0], 0.8);
}

TEST(Evaluate, ConstantLogitsPredictClassZero) {
  Model<float> model(small_classifier(Variant::glu), 1);
  model.head().weight().value.fill(0.0f);
  const data::Dataset ds = small_images(20);
  const EvalResult r = evaluate(model, ds);
  EXPECT_DOUBLE_EQ(r.accuracy, 5.0 / 20.0);
  EXPECT_NEAR(r.loss, std::log(4.0), 1e-6);
}

TEST(Fit, ZeroEpochsLeavesModelUntouched) {
  Model<float> model(small_classifier(Variant::baseline), 1);
  const Tensor<float> before = model.head().weight().value;
  const History h = fit(model, small_images(8), nullptr, quick_config(0));
  EXPECT_TRUE(h.empty());
  EXPECT_TRUE(bitwise_equal(model.head().weight().value, before));
}

TEST(Fit, RecordsPerStepAndPerEpoch) {
  Model<float> model(small_classifier(Variant::glu), 1);
  const data::Dataset train = small_images(20);
  const data::Dataset val = small_images(8);
  const History h = fit(model, train, &val, quick_config(2));
  std::size_t train_rows = 0, val_rows = 0;
  for (const auto& r : h) (r.phase == Phase::train ? train_rows : val_rows)++;
  EXPECT_EQ(train_rows, 6u);
  EXPECT_EQ(val_rows, 2u);
  EXPECT_EQ(h.front().step, 1u);
  EXPECT_EQ(h.front().lr, 3e-3);
}

TEST(Fit, BitwiseReproducible) {
  auto run = [] {
    Model<float> model(small_classifier(Variant::glu), 4);
    History h = fit(model, small_images(16), nullptr, quick_config(3));
    return std::make_pair(h, model.head().weight().value);
  };
  const auto a = run(), b = run();
  EXPECT_EQ(a.first, b.first);
  EXPECT_TRUE(bitwise_equal(a.second, b.second));
}

TEST(Fit, LossFallsOverThreeHundredSteps) {
  for (Variant v : {Variant::baseline, Variant::glu}) {
    Model<float> model(small_classifier(v), 6);
    TrainConfig cfg = quick_config(100);
    const History h = fit(model, small_images(24), nullptr, cfg);
    ASSERT_EQ(h.size(), 300u);
    EXPECT_LT(h.back().loss, h.front().loss) << to_string(v);
  }
}

TEST(Fit, DivergenceReportsStep) {
  Model<float> model(small_classifier(Variant::glu), 1);
  model.head().weight().value.fill(std::numeric_limits<float>::quiet_NaN());
  try {
    fit(model, small_images(8), nullptr, quick_config(1));
    FAIL();
  } catch (const DivergenceError& e) {
    EXPECT_EQ(e.step(), 1u);
  }
}
