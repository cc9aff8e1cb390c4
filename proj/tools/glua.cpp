#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "glua/cli.hpp"

int main(int argc, char** argv) {
  using namespace glua::cli;

  CLI::App app{"GLU attention experiment harness"};
  app.require_subcommand(1);

  std::string spec_path;
  auto* train = app.add_subcommand("train", "Train the model(s) described by a spec file");
  train->add_option("spec", spec_path, "key = value experiment spec")->required();

  std::string scope;
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient verification");
  gradcheck->add_option("scope", scope, "ops | attention | model")->required();

  std::size_t d_model = 0, n_heads = 0, seq_len = 64;
  auto* params = app.add_subcommand("params", "Attention parameter/FLOP parity table");
  params->add_option("d_model", d_model)->required();
  params->add_option("n_heads", n_heads)->required();
  params->add_option("--seq-len", seq_len, "tokens used for the FLOP estimate")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  if (*train) return cmd_train(spec_path, std::cout, std::cerr);
  if (*gradcheck) return cmd_gradcheck(scope, std::cout, std::cerr);
  if (*params) return cmd_params(d_model, n_heads, std::cout, std::cerr, seq_len);
  return kExitUsage;
}
