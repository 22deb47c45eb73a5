#include "posr/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "posr/errors.hpp"

namespace posr::ad {

std::vector<CoordinateCheck> GradCheckReport::failures() const {
  std::vector<CoordinateCheck> out;
  std::copy_if(coordinates.begin(), coordinates.end(), std::back_inserter(out),
               [](const CoordinateCheck& c) { return !c.passed; });
  return out;
}

namespace {

double evaluate(const ScalarProgram& f, const std::vector<Tensor>& theta) {
  Tape tape;
  std::vector<Var> leaves;
  leaves.reserve(theta.size());
  for (const Tensor& t : theta) leaves.push_back(tape.parameter(t));
  const Var loss = f(tape, leaves);
  const double value = tape.value(loss).item();
  if (!std::isfinite(value)) throw NumericError("grad_check: objective is not finite");
  return value;
}

}  // namespace

GradCheckReport grad_check(const ScalarProgram& f, const std::vector<Tensor>& theta0, const GradCheckOptions& options) {
  if (!(options.step > 0.0)) throw ContractError("grad_check: step must be positive");

  Tape tape;
  std::vector<Var> leaves;
  for (const Tensor& t : theta0) leaves.push_back(tape.parameter(t));
  const Var loss = f(tape, leaves);
  if (!std::isfinite(tape.value(loss).item())) throw NumericError("grad_check: objective is not finite at theta0");
  const Gradients grads = tape.backward(loss);

  GradCheckReport report;
  std::vector<Tensor> theta = theta0;
  for (std::size_t t = 0; t < theta.size(); ++t) {
    const Tensor& analytic = grads[leaves[t]];
    for (std::size_t i = 0; i < theta[t].size(); ++i) {
      const double origin = theta[t][i];
      theta[t][i] = origin + options.step;
      const double up = evaluate(f, theta);
      theta[t][i] = origin - options.step;
      const double down = evaluate(f, theta);
      theta[t][i] = origin;

      CoordinateCheck c;
      c.tensor = t;
      c.index = i;
      c.analytic = analytic[i];
      c.numeric = (up - down) / (2.0 * options.step);
      const double scale = std::max({std::abs(c.analytic), std::abs(c.numeric), options.denominator_floor});
      c.relative_error = std::abs(c.analytic - c.numeric) / scale;
      c.passed = c.relative_error <= options.tolerance;
      if (c.relative_error > report.max_relative_error || report.coordinates.empty()) {
        report.max_relative_error = std::max(report.max_relative_error, c.relative_error);
        if (c.relative_error >= report.max_relative_error) report.worst = report.coordinates.size();
      }
      report.passed = report.passed && c.passed;
      report.coordinates.push_back(c);
    }
  }
  return report;
}

}  // namespace posr::ad
