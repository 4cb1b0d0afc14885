#pragma once

#include <functional>
#include <vector>

#include "bhnd/tensor.h"

namespace bhnd {

/// Denominator floor of the relative error.
inline constexpr double kGradCheckFloor = 1e-8;

using DifferentiableFn = std::function<Tensor<double>(const std::vector<Tensor<double>>&)>;

struct GradCheckReport {
  double max_rel_error = 0.0;
  bool passed = true;
  int worst_input = -1;
  std::int64_t worst_element = -1;
  double analytic = 0.0;  // at the worst element
  double numeric = 0.0;
};

/// Compares autograd gradients of `fn` against central differences.
///
/// Non-scalar outputs are reduced to sum(w * y) with fixed pseudo-random
/// weights w, so every output element participates. The error for one
/// element is |a - n| / max(|a|, |n|, kGradCheckFloor); the report carries the maximum
/// over all elements of all inputs flagged in `check` (all inputs when empty).
GradCheckReport grad_check(const DifferentiableFn& fn, const std::vector<Tensor<double>>& inputs,
                           double tolerance, std::vector<bool> check = {}, double step = 1e-5);

}  // namespace bhnd
