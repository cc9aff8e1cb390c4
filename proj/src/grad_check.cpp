#include "glua/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace glua {

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic) + std::abs(numeric));
}

namespace {

double require_finite(double v, const std::string& where) {
  if (!std::isfinite(v)) throw NumericError("grad_check: non-finite value at " + where);
  return v;
}

}  // namespace

double grad_check(const ScalarFn& f, const Tensor<double>& x, double h) {
  Tensor<double> analytic;
  {
    Tape<double> tape;
    Var<double> xv = tape.input(x);
    Var<double> loss = f(tape, xv);
    tape.backward(loss);
    analytic = tape.grad(xv);
  }
  auto eval = [&f](const Tensor<double>& at) {
    Tape<double> tape;
    return f(tape, tape.constant(at)).value().item();
  };

  double worst = 0.0;
  Tensor<double> probe = x;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const std::string where = "coordinate " + std::to_string(i);
    probe[i] = x[i] + h;
    const double plus = require_finite(eval(probe), where);
    probe[i] = x[i] - h;
    const double minus = require_finite(eval(probe), where);
    probe[i] = x[i];
    const double numeric = (plus - minus) / (2.0 * h);
    worst = std::max(worst, relative_error(require_finite(analytic[i], where), numeric));
  }
  return worst;
}

ParamCheckReport grad_check_params(const LossFn& loss, std::span<Parameter<double>* const> params, double h) {
  zero_grads(params);
  {
    Tape<double> tape;
    tape.backward(loss(tape));
  }
  auto eval = [&loss] {
    Tape<double> tape;
    return loss(tape).value().item();
  };

  ParamCheckReport report;
  for (Parameter<double>* p : params) {
    ParamCheck check{p->name, 0.0};
    for (std::size_t i = 0; i < p->value.numel(); ++i) {
      const std::string where = p->name + "[" + std::to_string(i) + "]";
      const double saved = p->value[i];
      p->value[i] = saved + h;
      const double plus = require_finite(eval(), where);
      p->value[i] = saved - h;
      const double minus = require_finite(eval(), where);
      p->value[i] = saved;
      const double numeric = (plus - minus) / (2.0 * h);
      check.max_error = std::max(check.max_error, relative_error(require_finite(p->grad[i], where), numeric));
    }
    report.max_error = std::max(report.max_error, check.max_error);
    report.params.push_back(std::move(check));
  }
  zero_grads(params);
  return report;
}

}  // namespace glua
