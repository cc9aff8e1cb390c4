#include <algorithm>
#include <cmath>
#include <exception>
#include <iomanip>
#include <ostream>

#include "glua/attention.hpp"
#include "glua/cli.hpp"
#include "glua/grad_check.hpp"
#include "glua/model.hpp"
#include "glua/rng.hpp"
#include "glua/train.hpp"

namespace glua::cli {

namespace {

using D = double;

Tensor<D> random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  Tensor<D> t(std::move(shape));
  for (D& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

// Values bounded away from zero, for kinked functions.
Tensor<D> off_zero_tensor(Shape shape, std::uint64_t seed) {
  Tensor<D> t = random_tensor(std::move(shape), seed);
  for (D& v : t.data()) v = v < 0 ? v - 0.2 : v + 0.2;
  return t;
}

// Fixed random linear functional of y; gives every coordinate a distinct,
// nonzero upstream gradient.
Var<D> probe(Tape<D>& tape, Var<D> y, std::uint64_t seed = 99) {
  return sum(mul(y, tape.constant(random_tensor(y.shape(), seed))));
}

double check_fn(const ScalarFn& f, Shape shape, std::uint64_t seed = 1) {
  return grad_check(f, random_tensor(std::move(shape), seed), kGradCheckStep);
}

double check_params(const LossFn& loss, const ParamList<D>& params) {
  return grad_check_params(loss, params, kGradCheckStep).max_error;
}

template <typename Layer>
ParamList<D> params_of(Layer& layer) {
  ParamList<D> out;
  layer.collect(out);
  return out;
}

// Replace default parameter values with random ones so that checks do not
// sit at special points such as unit gain and zero shift.
void randomize(const ParamList<D>& params, std::uint64_t seed) {
  for (Parameter<D>* p : params) p->value = random_tensor(p->value.shape(), derive_seed(seed, p->name), -0.8, 0.8);
}

void add_op_cases(std::vector<GradCheckCase>& cases) {
  auto add_case = [&cases](std::string name, ScalarFn f, Shape shape) {
    cases.push_back({"op/" + name, [f = std::move(f), shape] { return check_fn(f, shape); }});
  };
  add_case("matmul-left",
           [](Tape<D>& t, Var<D> x) { return probe(t, matmul(x, t.constant(random_tensor({4, 2}, 7)))); }, {3, 4});
  add_case("matmul-right",
           [](Tape<D>& t, Var<D> x) { return probe(t, matmul(t.constant(random_tensor({3, 4}, 8)), x)); }, {4, 2});
  add_case("add", [](Tape<D>& t, Var<D> x) { return probe(t, add(x, t.constant(random_tensor({2, 3}, 9)))); },
           {2, 3});
  add_case("sub", [](Tape<D>& t, Var<D> x) { return probe(t, sub(t.constant(random_tensor({2, 3}, 9)), x)); },
           {2, 3});
  add_case("mul", [](Tape<D>& t, Var<D> x) { return probe(t, mul(x, t.constant(random_tensor({2, 3}, 10)))); },
           {2, 3});
  add_case("mul-self", [](Tape<D>& t, Var<D> x) { return probe(t, mul(x, x)); }, {2, 3});
  add_case("scale", [](Tape<D>& t, Var<D> x) { return probe(t, scale(x, 0.37)); }, {2, 3});
  cases.push_back({"op/relu", [] {
                     return grad_check([](Tape<D>& t, Var<D> x) { return probe(t, relu(x)); },
                                       off_zero_tensor({3, 4}, 2), kGradCheckStep);
                   }});
  add_case("sigmoid", [](Tape<D>& t, Var<D> x) { return probe(t, sigmoid(scale(x, 3.0))); }, {3, 4});
  add_case("silu", [](Tape<D>& t, Var<D> x) { return probe(t, silu(scale(x, 3.0))); }, {3, 4});
  add_case("transpose", [](Tape<D>& t, Var<D> x) { return probe(t, transpose(x)); }, {2, 5});
  add_case("reshape", [](Tape<D>& t, Var<D> x) { return probe(t, reshape(x, {3, 4})); }, {2, 6});
  add_case("slice_last", [](Tape<D>& t, Var<D> x) { return probe(t, slice_last(x, 1, 3)); }, {2, 5});
  add_case("slice_rows", [](Tape<D>& t, Var<D> x) { return probe(t, slice_rows(x, 1, 2)); }, {4, 3});
  add_case("concat_last",
           [](Tape<D>& t, Var<D> x) {
             const std::vector<Var<D>> parts{x, t.constant(random_tensor({3, 2}, 11)), x};
             return probe(t, concat_last<D>(parts));
           },
           {3, 2});
  add_case("split_half_last",
           [](Tape<D>& t, Var<D> x) {
             auto [a, b] = split_half_last(x);
             return add(probe(t, a, 5), probe(t, b, 6));
           },
           {3, 4});
  add_case("sum", [](Tape<D>&, Var<D> x) { return sum(mul(x, x)); }, {2, 3});
  add_case("mean", [](Tape<D>&, Var<D> x) { return mean(mul(x, x)); }, {2, 3});
  add_case("mean_rows", [](Tape<D>& t, Var<D> x) { return probe(t, mean_rows(x)); }, {4, 3});
  add_case("gather_rows",
           [](Tape<D>& t, Var<D> x) {
             const std::vector<int> ids{0, 2, 2, 4};
             return probe(t, gather_rows(x, std::span<const int>(ids)));
           },
           {5, 3});
  add_case("softmax_last", [](Tape<D>& t, Var<D> x) { return probe(t, softmax_last(scale(x, 2.0))); }, {3, 5});
  add_case("softmax_last-masked",
           [](Tape<D>& t, Var<D> x) {
             const Tensor<D> mask = causal_mask<D>(4);
             return probe(t, softmax_last(scale(x, 2.0), &mask));
           },
           {4, 4});
  add_case("cross_entropy",
           [](Tape<D>&, Var<D> x) {
             const std::vector<int> targets{1, 4, 0};
             return cross_entropy(scale(x, 2.0), std::span<const int>(targets));
           },
           {3, 5});
}

void add_layer_cases(std::vector<GradCheckCase>& cases) {
  cases.push_back({"layer/linear", [] {
                     Linear<D> lin("lin", 4, 3, 21);
                     const Tensor<D> x = random_tensor({2, 4}, 22);
                     const double by_param =
                         check_params([&](Tape<D>& t) { return probe(t, lin.forward(t, t.constant(x))); },
                                      params_of(lin));
                     const double by_input =
                         grad_check([&](Tape<D>& t, Var<D> v) { return probe(t, lin.forward(t, v)); }, x);
                     return std::max(by_param, by_input);
                   }});
  cases.push_back({"layer/layer_norm", [] {
                     LayerNorm<D> ln("ln", 5);
                     randomize(params_of(ln), 23);
                     const Tensor<D> x = random_tensor({3, 5}, 24, -2.0, 2.0);
                     const double by_param =
                         check_params([&](Tape<D>& t) { return probe(t, ln.forward(t, t.constant(x))); },
                                      params_of(ln));
                     const double by_input =
                         grad_check([&](Tape<D>& t, Var<D> v) { return probe(t, ln.forward(t, v)); }, x);
                     return std::max(by_param, by_input);
                   }});
  cases.push_back({"layer/glu", [] {
                     const Tensor<D> other = random_tensor({2, 3}, 25, -3.0, 3.0);
                     const double value_path = check_fn(
                         [&](Tape<D>& t, Var<D> x) { return probe(t, glu(x, t.constant(other))); }, {2, 3}, 26);
                     const double gate_path = check_fn(
                         [&](Tape<D>& t, Var<D> g) { return probe(t, glu(t.constant(other), scale(g, 3.0))); },
                         {2, 3}, 27);
                     return std::max(value_path, gate_path);
                   }});
  cases.push_back({"layer/glu_packed", [] {
                     return check_fn([](Tape<D>& t, Var<D> x) { return probe(t, glu_packed(scale(x, 3.0))); },
                                     {3, 6}, 28);
                   }});
  cases.push_back({"layer/glu_ffn", [] {
                     GluFfn<D> ffn("ffn", 6, 4, 29);
                     const Tensor<D> x = random_tensor({3, 6}, 30);
                     const double by_param =
                         check_params([&](Tape<D>& t) { return probe(t, ffn.forward(t, t.constant(x))); },
                                      params_of(ffn));
                     const double by_input =
                         grad_check([&](Tape<D>& t, Var<D> v) { return probe(t, ffn.forward(t, v)); }, x);
                     return std::max(by_param, by_input);
                   }});
  cases.push_back({"layer/embedding", [] {
                     Embedding<D> emb("emb", 5, 4, 31);
                     randomize(params_of(emb), 32);
                     const std::vector<int> ids{3, 0, 3};
                     return check_params([&](Tape<D>& t) { return probe(t, emb.forward(t, ids)); }, params_of(emb));
                   }});
}

double check_attention(Variant variant, bool causal, bool cross) {
  const AttentionConfig cfg = AttentionConfig::make(6, 2, variant);
  MultiHeadAttention<D> attn("attn", cfg, 41);
  const ParamList<D> params = params_of(attn);
  const Tensor<D> x = random_tensor({3, 6}, 42, -1.5, 1.5);
  const Tensor<D> kv = random_tensor({4, 6}, 43, -1.5, 1.5);
  const Tensor<D> mask = causal_mask<D>(3);
  const Tensor<D>* m = causal ? &mask : nullptr;
  auto forward = [&](Tape<D>& t, Var<D> q) {
    AttentionWeights<D> w{t.param(attn.w_q().weight()), t.param(attn.w_k().weight()), t.param(attn.w_v().weight()),
                          t.param(attn.w_o().weight())};
    if (cross) {
      Var<D> kvv = t.constant(kv);
      return attention_forward(cfg, w, q, kvv, kvv);
    }
    return attention_forward(cfg, w, q, q, q, m);
  };
  const double by_param = check_params([&](Tape<D>& t) { return probe(t, forward(t, t.constant(x))); }, params);
  const double by_input = grad_check([&](Tape<D>& t, Var<D> v) { return probe(t, forward(t, v)); }, x);
  return std::max(by_param, by_input);
}

void add_attention_cases(std::vector<GradCheckCase>& cases) {
  for (Variant v : {Variant::baseline, Variant::glu}) {
    const std::string name(to_string(v));
    cases.push_back({"attention/" + name, [v] { return check_attention(v, false, false); }});
    cases.push_back({"attention/" + name + "-causal", [v] { return check_attention(v, true, false); }});
    cases.push_back({"attention/" + name + "-cross", [v] { return check_attention(v, false, true); }});
  }
}

double check_block(Variant variant) {
  ModelConfig cfg;
  cfg.n_layers = 1;
  cfg.d_model = 6;
  cfg.n_heads = 1;
  cfg.ffn_hidden = 4;
  cfg.variant = variant;
  Block<D> block("block", cfg, 51);
  ParamList<D> params = params_of(block);
  const Tensor<D> x = random_tensor({3, 6}, 52, -1.5, 1.5);
  const double by_param =
      check_params([&](Tape<D>& t) { return probe(t, block.forward(t, t.constant(x))); }, params);
  const double by_input = grad_check([&](Tape<D>& t, Var<D> v) { return probe(t, block.forward(t, v)); }, x);
  return std::max(by_param, by_input);
}

double check_classifier(Variant variant) {
  ModelConfig cfg;
  cfg.n_layers = 2;
  cfg.d_model = 6;
  cfg.n_heads = 2;
  cfg.ffn_hidden = 4;
  cfg.variant = variant;
  cfg.task = ClassifyTask{3, 4, 12};
  Model<D> model(cfg, 61);
  const Tensor<D> patches = random_tensor({4, 12}, 62, 0.0, 1.0);
  const std::vector<int> target{2};
  return check_params(
      [&](Tape<D>& t) { return cross_entropy(model.classifier_forward(t, patches), std::span<const int>(target)); },
      model.parameters());
}

double check_lm(Variant variant, std::size_t d_model, std::size_t heads, std::size_t context) {
  ModelConfig cfg;
  cfg.n_layers = 2;
  cfg.d_model = d_model;
  cfg.n_heads = heads;
  cfg.ffn_hidden = 4;
  cfg.variant = variant;
  cfg.final_norm = true;
  cfg.task = LmTask{7, context};
  Model<D> model(cfg, 71);
  std::vector<int> tokens, targets;
  Rng rng(72);
  for (std::size_t i = 0; i < context; ++i) tokens.push_back(static_cast<int>(rng.below(7)));
  for (std::size_t i = 0; i < context; ++i) targets.push_back(static_cast<int>(rng.below(7)));
  return check_params([&](Tape<D>& t) { return cross_entropy(model.lm_forward(t, tokens), targets); },
                      model.parameters());
}

void add_model_cases(std::vector<GradCheckCase>& cases) {
  for (Variant v : {Variant::baseline, Variant::glu}) {
    const std::string name(to_string(v));
    cases.push_back({"model/block-" + name, [v] { return check_block(v); }});
    cases.push_back({"model/classifier-" + name, [v] { return check_classifier(v); }});
    cases.push_back({"model/lm-" + name, [v] { return check_lm(v, 6, 1, 3); }});
    cases.push_back({"model/lm-" + name + "-d12", [v] { return check_lm(v, 12, 2, 5); }});
  }
}

}  // namespace

std::optional<GradScope> parse_scope(std::string_view text) {
  if (text == "ops") return GradScope::ops;
  if (text == "attention") return GradScope::attention;
  if (text == "model") return GradScope::model;
  return std::nullopt;
}

std::vector<GradCheckCase> gradcheck_cases(GradScope scope) {
  std::vector<GradCheckCase> cases;
  add_op_cases(cases);
  if (scope == GradScope::ops) return cases;
  add_layer_cases(cases);
  add_attention_cases(cases);
  if (scope == GradScope::attention) return cases;
  add_model_cases(cases);
  return cases;
}

int run_gradcheck(std::span<const GradCheckCase> cases, std::ostream& out, std::vector<GradCheckOutcome>* outcomes) {
  std::vector<GradCheckOutcome> results;
  for (const GradCheckCase& c : cases) {
    GradCheckOutcome r;
    r.component = c.component;
    try {
      r.max_error = c.run();
      r.passed = std::isfinite(r.max_error) && r.max_error < kGradCheckTolerance;
    } catch (const std::exception& e) {
      r.failure = e.what();
    }
    out << std::left << std::setw(34) << r.component << ' ';
    if (r.failure.empty()) {
      out << std::scientific << std::setprecision(3) << r.max_error << std::defaultfloat;
    } else {
      out << "error: " << r.failure;
    }
    out << "  " << (r.passed ? "PASS" : "FAIL") << '\n';
    results.push_back(std::move(r));
  }
  const auto failed = std::count_if(results.begin(), results.end(), [](const auto& r) { return !r.passed; });
  if (failed == 0) {
    out << "all " << results.size() << " components below " << kGradCheckTolerance << '\n';
  } else {
    out << failed << " component(s) failed:";
    for (const auto& r : results)
      if (!r.passed) out << ' ' << r.component;
    out << '\n';
  }
  if (outcomes) *outcomes = std::move(results);
  return failed == 0 ? kExitOk : kExitNumeric;
}

int cmd_gradcheck(std::string_view scope, std::ostream& out, std::ostream& err) {
  const auto parsed = parse_scope(scope);
  if (!parsed) {
    err << "unknown gradcheck scope '" << scope << "' (expected ops, attention or model)\n";
    return kExitUsage;
  }
  const auto cases = gradcheck_cases(*parsed);
  return run_gradcheck(cases, out);
}

}  // namespace glua::cli
