#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "eclab/gradcore/tape.hpp"

namespace eclab {

/// A scalar function of several tensors, evaluated on a fresh tape.
using MultiScalarFn =
    std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>& inputs)>;
using ScalarFn = std::function<Var<double>(Var<double> x)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t entries_checked = 0;
};

/// Compares backward() against five-point central differences over every element of
/// every input. Error per element is
///   |analytic - numeric| / max(|analytic|, |numeric|, floor)
/// The floor keeps gradients that vanish identically (for example a key
/// bias, which cancels inside the softmax) from dividing roundoff by zero.
GradCheckResult finite_diff_check(const MultiScalarFn& f, const std::vector<Tensor<double>>& inputs,
                                  double h = 1e-5, double floor = 1e-6);

/// Single-input convenience form; returns the max relative error.
double finite_diff_check(const ScalarFn& f, const Tensor<double>& x, double h = 1e-5);

}  // namespace eclab
