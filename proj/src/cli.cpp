#include "glua/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <ostream>
#include <string>

#include "glua/attention.hpp"
#include "glua/checkpoint.hpp"
#include "glua/experiment.hpp"

namespace glua::cli {

namespace {

struct MatrixRow {
  const char* name;
  std::size_t in;
  std::size_t out;
};

std::vector<MatrixRow> projection_rows(const AttentionConfig& cfg) {
  return {{"W_Q", cfg.d_model, cfg.d_model},
          {"W_K", cfg.d_model, cfg.d_model},
          {"W_V", cfg.d_model, cfg.v_proj_out},
          {"W_O", cfg.attn_inner, cfg.d_model}};
}

// 2*m*k*n per matmul over a self-attention pass of `n` tokens.
std::size_t attention_flops(const AttentionConfig& cfg, std::size_t n) {
  std::size_t flops = 0;
  for (const MatrixRow& r : projection_rows(cfg)) flops += 2 * n * r.in * r.out;
  flops += 2 * n * n * cfg.d_model;     // Q K^T over all heads
  flops += 2 * n * n * cfg.attn_inner;  // probabilities times values
  return flops;
}

void print_variant(std::ostream& out, const AttentionConfig& cfg, std::size_t seq_len) {
  out << to_string(cfg.variant) << " attention (d_model=" << cfg.d_model << ", heads=" << cfg.n_heads << ")\n";
  for (const MatrixRow& r : projection_rows(cfg)) {
    out << "  " << r.name << "  " << std::setw(5) << r.in << "->" << std::left << std::setw(5) << r.out
        << std::right << "  params " << r.in * r.out << '\n';
  }
  if (cfg.variant == Variant::glu) {
    out << "  GLU on values: " << cfg.v_proj_out << " -> " << cfg.attn_inner << " (" << cfg.per_head_v
        << " per head)\n";
  }
  out << "  total weights " << param_count(cfg) << '\n';
  out << "  matmul FLOPs for " << seq_len << " tokens " << attention_flops(cfg, seq_len) << '\n';
}

}  // namespace

int cmd_params(std::size_t d_model, std::size_t n_heads, std::ostream& out, std::ostream& err, std::size_t seq_len) {
  AttentionConfig base, glu;
  try {
    base = AttentionConfig::make(d_model, n_heads, Variant::baseline);
    glu = AttentionConfig::make(d_model, n_heads, Variant::glu);
  } catch (const std::invalid_argument& e) {
    err << e.what() << '\n';
    return kExitUsage;
  }
  print_variant(out, base, seq_len);
  print_variant(out, glu, seq_len);
  const bool equal = param_count(base) == param_count(glu);
  out << "parity: " << (equal ? "equal" : "MISMATCH") << " (" << param_count(base) << " vs " << param_count(glu)
      << ")\n";
  return equal ? kExitOk : kExitNumeric;
}

int cmd_train(const std::string& spec_path, std::ostream& out, std::ostream& err) {
  ExperimentSpec spec;
  try {
    spec = load_spec(spec_path);
    spec.validate();
  } catch (const SpecError& e) {
    err << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << e.what() << '\n';
    return kExitIo;
  }
  std::filesystem::path out_dir = spec.output_dir;
  if (const char* env = std::getenv(kOutputDirEnv); env && *env) out_dir = env;

  try {
    const ExperimentResult result = run_experiment(spec, out_dir);
    for (const VariantOutcome& o : result.outcomes) {
      out << to_string(o.variant) << ": " << o.parameter_count << " parameters, "
          << o.history.size() << " history rows";
      if (o.final_train) {
        out << ", final train loss " << format_double(o.final_train->loss) << ", accuracy "
            << format_double(o.final_train->accuracy);
      }
      out << '\n';
    }
    if (result.unigram_entropy) out << "unigram entropy " << format_double(*result.unigram_entropy) << '\n';
    if (result.outcomes.size() > 1) out << comparison_csv(result);
    out << "wrote " << out_dir.string() << '\n';
  } catch (const DivergenceError& e) {
    err << e.what() << '\n';
    return kExitNumeric;
  } catch (const NumericError& e) {
    err << e.what() << '\n';
    return kExitNumeric;
  } catch (const SpecError& e) {
    err << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << e.what() << '\n';
    return kExitIo;
  }
  return kExitOk;
}

}  // namespace glua::cli
