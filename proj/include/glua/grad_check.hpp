#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "glua/tape.hpp"

namespace glua {

/// |analytic - numeric| / max(1e-8, |analytic| + |numeric|)
double relative_error(double analytic, double numeric);

using ScalarFn = std::function<Var<double>(Tape<double>&, Var<double>)>;
using LossFn = std::function<Var<double>(Tape<double>&)>;

/// Max relative error between the taped gradient of f at x and central
/// differences (f(x + h e_i) - f(x - h e_i)) / 2h over every coordinate.
double grad_check(const ScalarFn& f, const Tensor<double>& x, double h = 1e-5);

struct ParamCheck {
  std::string name;
  double max_error = 0.0;
};

struct ParamCheckReport {
  double max_error = 0.0;
  std::vector<ParamCheck> params;
};

/// Same check against every coordinate of every parameter. `loss` builds the
/// scalar on a fresh tape and must read parameters through Tape::param.
ParamCheckReport grad_check_params(const LossFn& loss, std::span<Parameter<double>* const> params,
                                   double h = 1e-5);

}  // namespace glua
