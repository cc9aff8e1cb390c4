#pragma once

#include <cstddef>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace glua::cli {

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitNumeric = 2, kExitIo = 3 };

/// Environment variable that overrides a spec's output_dir.
inline constexpr const char* kOutputDirEnv = "GLUA_OUTPUT_DIR";

inline constexpr double kGradCheckTolerance = 1e-4;
inline constexpr double kGradCheckStep = 1e-5;

enum class GradScope { ops, attention, model };
std::optional<GradScope> parse_scope(std::string_view text);

/// One named finite-difference check; returns the worst relative error.
struct GradCheckCase {
  std::string component;
  std::function<double()> run;
};

/// ops: tensor ops. attention: ops plus layers and both attention variants.
/// model: everything, including blocks and both full desk models.
std::vector<GradCheckCase> gradcheck_cases(GradScope scope);

struct GradCheckOutcome {
  std::string component;
  double max_error = 0.0;
  bool passed = false;
  std::string failure;
};

/// Runs the cases, prints one line per component and returns kExitOk iff
/// every component is below tolerance (kExitNumeric otherwise).
int run_gradcheck(std::span<const GradCheckCase> cases, std::ostream& out,
                  std::vector<GradCheckOutcome>* outcomes = nullptr);

int cmd_gradcheck(std::string_view scope, std::ostream& out, std::ostream& err);
int cmd_params(std::size_t d_model, std::size_t n_heads, std::ostream& out, std::ostream& err,
               std::size_t seq_len = 64);
int cmd_train(const std::string& spec_path, std::ostream& out, std::ostream& err);

}  // namespace glua::cli
