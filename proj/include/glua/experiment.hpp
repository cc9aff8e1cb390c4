#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "glua/model.hpp"
#include "glua/train.hpp"

namespace glua::cli {

enum class Task { classify, lm };
enum class VariantChoice { baseline, glu, both };

/// Everything needed to reproduce one training run.
///
/// Text form is one `key = value` per line; `#` starts a comment and blank
/// lines are ignored. Unknown keys are errors. format_spec writes every key
/// so parse_spec(format_spec(s)) == s.
struct ExperimentSpec {
  Task task = Task::classify;
  VariantChoice variant = VariantChoice::both;

  std::size_t n_layers = 2;
  std::size_t d_model = 48;
  std::size_t n_heads = 4;
  std::size_t ffn_hidden = 128;
  bool final_norm = false;

  // classify
  std::size_t n_classes = 10;
  std::size_t image_size = 8;
  std::size_t patch_size = 4;
  std::size_t n_samples = 64;
  double noise = 0.1;
  // lm
  std::size_t context = 16;
  std::size_t text_chars = 4096;
  /// CIFAR-10 binary file (classify) or UTF-8 text (lm); synthetic data when empty.
  std::string data_path;
  /// Tail fraction of the examples held out for per-epoch validation.
  double val_fraction = 0.0;

  double lr_max = 3e-3;
  double lr_min = 0.0;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t batch_size = 16;
  std::size_t epochs = 75;
  std::optional<double> grad_clip;

  std::uint64_t seed = 1;       // data order
  std::uint64_t init_seed = 1;  // weights
  std::uint64_t data_seed = 1;  // synthetic data

  std::string output_dir = "runs/default";

  friend bool operator==(const ExperimentSpec&, const ExperimentSpec&) = default;

  /// Throws SpecError (line 0) for inconsistent settings.
  void validate() const;
  ModelConfig model_config(Variant v) const;
  TrainConfig train_config() const;
  std::vector<Variant> variants() const;
};

/// Thrown for malformed spec text; carries the 1-based line number.
class SpecError : public std::invalid_argument {
 public:
  SpecError(const std::string& what, std::size_t line);
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

ExperimentSpec parse_spec(std::string_view text);
std::string format_spec(const ExperimentSpec& spec);
ExperimentSpec load_spec(const std::filesystem::path& path);

/// Shortest decimal that round-trips to the same double.
std::string format_double(double v);

inline constexpr std::string_view kCsvHeader = "epoch,step,phase,loss,accuracy,lr";
std::string history_csv(const History& history);

struct ExperimentData {
  data::Dataset train;
  data::Dataset validation;
  /// Unigram entropy of the training corpus (lm only).
  std::optional<double> unigram_entropy;
};

ExperimentData build_data(const ExperimentSpec& spec);

struct VariantOutcome {
  Variant variant = Variant::baseline;
  History history;
  std::optional<EvalResult> final_train;
  std::size_t parameter_count = 0;
};

struct ExperimentResult {
  std::vector<VariantOutcome> outcomes;
  std::optional<double> unigram_entropy;
};

/// Trains each requested variant and writes, per variant, metrics.csv and
/// model.ckpt. A single variant writes into `out_dir`; `both` writes into
/// `out_dir/baseline` and `out_dir/glu` plus `out_dir/comparison.csv`.
ExperimentResult run_experiment(const ExperimentSpec& spec, const std::filesystem::path& out_dir);

std::string comparison_csv(const ExperimentResult& result);

}  // namespace glua::cli
