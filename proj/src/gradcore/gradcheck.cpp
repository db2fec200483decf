#include "eclab/gradcore/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace eclab {

namespace {

double evaluate(const MultiScalarFn& f, const std::vector<Tensor<double>>& inputs) {
  Tape<double> tape;
  std::vector<Var<double>> vars;
  vars.reserve(inputs.size());
  for (const auto& t : inputs) vars.push_back(tape.constant(t));
  const auto out = f(tape, vars);
  if (out.value().numel() != 1) {
    throw ShapeError("finite_diff_check: function output is not scalar, shape " +
                     shape_string(out.shape()));
  }
  return out.value()[0];
}

}  // namespace

GradCheckResult finite_diff_check(const MultiScalarFn& f, const std::vector<Tensor<double>>& inputs,
                                  double h, double floor) {
  std::vector<std::vector<double>> analytic;
  {
    Tape<double> tape;
    std::vector<Var<double>> vars;
    for (const auto& t : inputs) vars.push_back(tape.leaf(t, true));
    const auto out = f(tape, vars);
    tape.backward(out);
    for (const auto& v : vars) analytic.push_back(tape.grad(v));
  }

  GradCheckResult result;
  auto probe = inputs;
  for (std::size_t i = 0; i < probe.size(); ++i) {
    for (std::size_t j = 0; j < probe[i].numel(); ++j) {
      const double orig = probe[i][j];
      auto at = [&](double offset) {
        probe[i][j] = orig + offset;
        return evaluate(f, probe);
      };
      // Five-point stencil: truncation error O(h^4).
      const double numeric = (8.0 * (at(h) - at(-h)) - (at(2.0 * h) - at(-2.0 * h))) / (12.0 * h);
      probe[i][j] = orig;
      const double err = std::abs(analytic[i][j] - numeric) /
                         std::max({std::abs(analytic[i][j]), std::abs(numeric), floor});
      ++result.entries_checked;
      if (err > result.max_rel_error || result.entries_checked == 1) {
        result.max_rel_error = err;
        result.worst_input = i;
        result.worst_index = j;
        result.analytic = analytic[i][j];
        result.numeric = numeric;
      }
    }
  }
  return result;
}

double finite_diff_check(const ScalarFn& f, const Tensor<double>& x, double h) {
  const MultiScalarFn wrapped = [&f](Tape<double>&, const std::vector<Var<double>>& v) {
    return f(v[0]);
  };
  return finite_diff_check(wrapped, {x}, h).max_rel_error;
}

}  // namespace eclab
