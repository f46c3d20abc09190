#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "dcebad/tape.hpp"

namespace dcebad {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  /// Worst entry per parameter, same order as the input list.
  std::vector<double> per_param;
};

/// Builds a scalar on the given tape from the current parameter values.
using ScalarFn = std::function<Tensor(Tape&)>;

/// Relative error used throughout: |a - n| / max(1e-8, |a| + |n|).
double relative_error(double analytic, double numeric);

/// Compares reverse-mode gradients of `f` against central differences with
/// step `eps` for every entry of every parameter. Parameters must be leaf
/// tensors with requires_grad set; their gradients are overwritten.
GradCheckResult grad_check(const ScalarFn& f, std::span<const Tensor> params, double eps = 1e-5);
GradCheckResult grad_check(const ScalarFn& f, std::span<const NamedTensor> params,
                           double eps = 1e-5);

}  // namespace dcebad
