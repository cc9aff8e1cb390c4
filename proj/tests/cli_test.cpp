#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

#include "glua/cli.hpp"
#include "glua/experiment.hpp"
#include "glua/grad_check.hpp"
#include "glua/ops.hpp"
#include "glua/rng.hpp"

using namespace glua;
using namespace glua::cli;

namespace {

std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "glua_cli_test";
  std::filesystem::create_directories(dir);
  return dir / name;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::filesystem::path write_spec(const std::string& name, const std::string& text) {
  const auto path = scratch(name);
  std::ofstream(path) << text;
  return path;
}

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

TEST(Spec, DefaultsRoundTrip) {
  const ExperimentSpec spec;
  EXPECT_EQ(parse_spec(format_spec(spec)), spec);
}

TEST(Spec, RandomSpecsRoundTrip) {
  Rng rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    ExperimentSpec s;
    s.task = rng.below(2) ? Task::lm : Task::classify;
    s.variant = static_cast<VariantChoice>(rng.below(3));
    s.n_layers = 1 + rng.below(8);
    s.d_model = 3 * (1 + rng.below(100));
    s.final_norm = rng.below(2) == 1;
    s.noise = rng.uniform(0, 1);
    s.val_fraction = rng.uniform(0, 0.9);
    s.lr_max = rng.uniform(1e-6, 1e-1);
    s.lr_min = s.lr_max * rng.uniform01();
    s.eps = rng.uniform(1e-12, 1e-6);
    s.grad_clip = rng.below(2) ? std::optional<double>(rng.uniform(0.1, 10)) : std::nullopt;
    s.seed = rng.next_u64();
    s.init_seed = rng.next_u64();
    s.data_seed = rng.next_u64();
    s.output_dir = "runs/trial " + std::to_string(trial);
    s.data_path = trial % 3 ? "" : "/data/file.bin";
    EXPECT_EQ(parse_spec(format_spec(s)), s) << format_spec(s);
  }
}

TEST(Spec, CommentsAndBlankLines) {
  const ExperimentSpec s = parse_spec("# header\n\n  task = lm   # trailing\nd_model=96\n");
  EXPECT_EQ(s.task, Task::lm);
  EXPECT_EQ(s.d_model, 96u);
  EXPECT_EQ(s.n_heads, ExperimentSpec{}.n_heads);
}

TEST(Spec, ErrorsCarryLineNumbers) {
  auto line_of = [](const std::string& text) {
    try {
      parse_spec(text);
    } catch (const SpecError& e) {
      return e.line();
    }
    return std::size_t{0};
  };
  EXPECT_EQ(line_of("task = lm\nbogus = 1\n"), 2u);
  EXPECT_EQ(line_of("epochs = 2\n\nepochs = 3\n"), 3u);
  EXPECT_EQ(line_of("d_model = many\n"), 1u);
  EXPECT_EQ(line_of("just words\n"), 1u);
  EXPECT_EQ(line_of("variant = best\n"), 1u);
}

TEST(Spec, ValidationRejectsInconsistentSettings) {
  ExperimentSpec s;
  s.d_model = 50;
  EXPECT_THROW(s.validate(), SpecError);
  s = ExperimentSpec{};
  s.patch_size = 3;
  EXPECT_THROW(s.validate(), SpecError);
  s = ExperimentSpec{};
  s.val_fraction = 1.0;
  EXPECT_THROW(s.validate(), SpecError);
  s = ExperimentSpec{};
  s.output_dir = "runs#1";
  EXPECT_THROW(s.validate(), SpecError);
  EXPECT_NO_THROW(ExperimentSpec{}.validate());
}

TEST(FormatDouble, ShortestRoundTrip) {
  EXPECT_EQ(format_double(0.1), "0.1");
  EXPECT_EQ(format_double(1.0), "1");
  EXPECT_EQ(format_double(3e-3), "0.003");
  Rng rng(3);
  for (int i = 0; i < 1000; ++i) {
    const double v = rng.normal() * std::pow(10.0, rng.uniform(-20, 20));
    EXPECT_EQ(std::stod(format_double(v)), v);
  }
}

TEST(HistoryCsv, FixedSchema) {
  const History h = {{0, 1, Phase::train, 2.5, 0.25, 0.001}, {0, 1, Phase::val, 2.0, 0.5, 0.001}};
  EXPECT_EQ(history_csv(h), "epoch,step,phase,loss,accuracy,lr\n0,1,train,2.5,0.25,0.001\n0,1,val,2,0.5,0.001\n");
  EXPECT_EQ(history_csv({}), "epoch,step,phase,loss,accuracy,lr\n");
}

TEST(Params, ReferenceDimensions) {
  std::ostringstream out, err;
  EXPECT_EQ(cmd_params(384, 8, out, err), kExitOk);
  const std::string text = out.str();
  EXPECT_NE(text.find("384->512"), std::string::npos);
  EXPECT_NE(text.find("256->384"), std::string::npos);
  std::size_t totals = 0;
  for (std::size_t at = text.find("total weights 589824"); at != std::string::npos;
       at = text.find("total weights 589824", at + 1))
    ++totals;
  EXPECT_EQ(totals, 2u);
  EXPECT_NE(text.find("parity: equal"), std::string::npos);
}

TEST(Params, SmallestInstance) {
  std::ostringstream out, err;
  EXPECT_EQ(cmd_params(6, 1, out, err), kExitOk);
  EXPECT_NE(out.str().find("total weights 144"), std::string::npos);
}

TEST(Params, IndivisibleWidthExplainsRule) {
  std::ostringstream out, err;
  EXPECT_EQ(cmd_params(10, 2, out, err), kExitUsage);
  EXPECT_NE(err.str().find("4"), std::string::npos);
  EXPECT_TRUE(out.str().empty());
}

TEST(Params, ExitCodeTracksParity) {
  for (std::size_t d : {6u, 12u, 48u, 96u, 384u}) {
    for (std::size_t h = 1; h <= d; ++h) {
      std::ostringstream out, err;
      const int code = cmd_params(d, h, out, err);
      const bool valid = d % h == 0 && (2 * d / 3) % h == 0;
      EXPECT_EQ(code, valid ? kExitOk : kExitUsage) << d << "/" << h;
    }
  }
}

TEST(GradCheckCommand, OpsScopePasses) {
  std::ostringstream out, err;
  EXPECT_EQ(cmd_gradcheck("ops", out, err), kExitOk) << out.str() << err.str();
}

TEST(GradCheckCommand, UnknownScope) {
  std::ostringstream out, err;
  EXPECT_EQ(cmd_gradcheck("everything", out, err), kExitUsage);
}

TEST(GradCheckCommand, ScopesAreCumulative) {
  const auto ops = gradcheck_cases(GradScope::ops);
  const auto attention = gradcheck_cases(GradScope::attention);
  const auto model = gradcheck_cases(GradScope::model);
  EXPECT_LT(ops.size(), attention.size());
  EXPECT_LT(attention.size(), model.size());
  std::set<std::string> names;
  for (const auto& c : model) names.insert(c.component);
  for (const char* expected : {"op/matmul-left", "op/silu", "op/softmax_last", "op/cross_entropy", "layer/linear",
                               "layer/layer_norm", "layer/glu", "layer/glu_ffn", "layer/embedding",
                               "attention/baseline", "attention/glu", "model/block-baseline", "model/block-glu",
                               "model/classifier-baseline", "model/classifier-glu", "model/lm-baseline",
                               "model/lm-glu"}) {
    EXPECT_TRUE(names.count(expected)) << expected;
  }
}

TEST(GradCheckCommand, CorruptedSiluDerivativeFails) {
  std::vector<GradCheckCase> cases = gradcheck_cases(GradScope::ops);
  cases.push_back({"op/silu-corrupted", [] {
                     ScalarFn f = [](Tape<double>& t, Var<double> x) {
                       Tensor<double> y = x.value();
                       for (double& v : y.data()) v = silu_scalar(v);
                       const std::size_t ix = x.id;
                       auto s = t.record(std::move(y), {ix}, [ix](Tape<double>& tp, const Tensor<double>& g) {
                         const Tensor<double>& xv = tp.value(ix);
                         Tensor<double>* dx = tp.accumulate_grad(ix);
                         for (std::size_t i = 0; i < xv.numel(); ++i)
                           (*dx)[i] += g[i] * (silu_grad_scalar(xv[i]) + 0.01);
                       });
                       return sum(s);
                     };
                     return grad_check(f, Tensor<double>({4}, {-1.0, -0.2, 0.4, 1.3}), kGradCheckStep);
                   }});
  std::ostringstream out;
  std::vector<GradCheckOutcome> outcomes;
  EXPECT_EQ(run_gradcheck(cases, out, &outcomes), kExitNumeric);
  ASSERT_EQ(outcomes.size(), cases.size());
  EXPECT_FALSE(outcomes.back().passed);
  for (std::size_t i = 0; i + 1 < outcomes.size(); ++i) EXPECT_TRUE(outcomes[i].passed) << outcomes[i].component;
  EXPECT_NE(out.str().find("op/silu-corrupted"), std::string::npos);
}

TEST(GradCheckCommand, ThrowingCaseFails) {
  std::vector<GradCheckCase> cases{{"broken", []() -> double { throw NumericError("boom"); }}};
  std::ostringstream out;
  std::vector<GradCheckOutcome> outcomes;
  EXPECT_EQ(run_gradcheck(cases, out, &outcomes), kExitNumeric);
  EXPECT_NE(outcomes[0].failure.find("boom"), std::string::npos);
}

TEST(TrainCommand, ZeroEpochsWritesHeaderOnly) {
  const auto dir = scratch("zero");
  std::filesystem::remove_all(dir);
  const auto spec = write_spec("zero.spec", "variant = glu\nepochs = 0\noutput_dir = " + dir.string() + "\n");
  std::ostringstream out, err;
  ASSERT_EQ(cmd_train(spec.string(), out, err), kExitOk) << err.str();
  EXPECT_EQ(slurp(dir / "metrics.csv"), "epoch,step,phase,loss,accuracy,lr\n");
  EXPECT_TRUE(std::filesystem::exists(dir / "model.ckpt"));
}

TEST(TrainCommand, BothVariantsDeterministic) {
  const std::string body =
      "d_model = 12\nn_heads = 2\nn_layers = 1\nffn_hidden = 16\nn_samples = 16\nepochs = 2\nbatch_size = 8\n"
      "val_fraction = 0.25\n";
  std::string first[3], second[3];
  for (int run = 0; run < 2; ++run) {
    const auto dir = scratch("both" + std::to_string(run));
    std::filesystem::remove_all(dir);
    const auto spec = write_spec("both.spec", body + "output_dir = " + dir.string() + "\n");
    std::ostringstream out, err;
    ASSERT_EQ(cmd_train(spec.string(), out, err), kExitOk) << err.str();
    std::string* dst = run == 0 ? first : second;
    dst[0] = slurp(dir / "baseline" / "metrics.csv");
    dst[1] = slurp(dir / "glu" / "metrics.csv");
    dst[2] = slurp(dir / "comparison.csv");
  }
  for (int i = 0; i < 3; ++i) EXPECT_EQ(first[i], second[i]);
  // 12 training examples, batch 8: 2 steps per epoch, one val row per epoch, one summary row.
  EXPECT_EQ(count_lines(first[0]), 1u + 4 + 2 + 1);
  EXPECT_NE(first[2].find("final_train_loss,"), std::string::npos);
  EXPECT_NE(first[2].find("final_val_loss,"), std::string::npos);
  EXPECT_EQ(first[2].rfind("metric,baseline,glu,glu_minus_baseline\n", 0), 0u);
}

TEST(TrainCommand, OutputDirOverride) {
  const auto dir = scratch("override");
  std::filesystem::remove_all(dir);
  const auto spec = write_spec("override.spec", "variant = baseline\nepochs = 0\noutput_dir = " +
                                                    scratch("ignored").string() + "\n");
  ::setenv(kOutputDirEnv, dir.c_str(), 1);
  std::ostringstream out, err;
  const int code = cmd_train(spec.string(), out, err);
  ::unsetenv(kOutputDirEnv);
  ASSERT_EQ(code, kExitOk) << err.str();
  EXPECT_TRUE(std::filesystem::exists(dir / "metrics.csv"));
}

TEST(TrainCommand, ExitCodes) {
  std::ostringstream out, err;
  EXPECT_EQ(cmd_train(scratch("absent.spec").string(), out, err), kExitIo);
  EXPECT_EQ(cmd_train(write_spec("bad.spec", "d_model = 10\n").string(), out, err), kExitUsage);
  EXPECT_EQ(cmd_train(write_spec("typo.spec", "dmodel = 12\n").string(), out, err), kExitUsage);
  const auto missing_data =
      write_spec("nodata.spec", "task = lm\ndata_path = " + scratch("no_corpus.txt").string() +
                                    "\noutput_dir = " + scratch("nodata").string() + "\n");
  EXPECT_EQ(cmd_train(missing_data.string(), out, err), kExitIo);
}

TEST(TrainCommand, DivergenceNamesStep) {
  const auto spec = write_spec("diverge.spec",
                               "variant = baseline\nd_model = 12\nn_heads = 2\nn_layers = 1\nffn_hidden = 8\n"
                               "n_samples = 8\nepochs = 3\nbatch_size = 4\nlr_max = 1e30\nlr_min = 1e30\n"
                               "output_dir = " + scratch("diverge").string() + "\n");
  std::ostringstream out, err;
  EXPECT_EQ(cmd_train(spec.string(), out, err), kExitNumeric);
  EXPECT_NE(err.str().find("step"), std::string::npos) << err.str();
}
