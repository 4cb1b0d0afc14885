#include "bhnd/grad_check.h"

#include <algorithm>
#include <cmath>

#include "bhnd/ops.h"
#include "bhnd/rng.h"

namespace bhnd {

namespace {

Tensor<double> reduce_to_scalar(const Tensor<double>& y, const Tensor<double>& weights) {
  if (y.numel() == 1) return reshape(y, {});
  return sum(mul(y, weights));
}

Tensor<double> projection_weights(const Shape& shape) {
  Rng rng(0x6772616463686bULL);
  return uniform<double>(shape, 0.5, 1.5, rng);
}

}  // namespace

GradCheckReport grad_check(const DifferentiableFn& fn, const std::vector<Tensor<double>>& inputs,
                           double tolerance, std::vector<bool> check, double step) {
  if (check.empty()) check.assign(inputs.size(), true);

  // Fresh leaves so the caller's tensors are never mutated.
  std::vector<Tensor<double>> leaves;
  leaves.reserve(inputs.size());
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    leaves.push_back(inputs[i].detach());
    leaves.back().set_requires_grad(check[i]);
  }

  Tensor<double> weights;
  Tensor<double> loss;
  {
    auto y = fn(leaves);
    if (y.numel() != 1) weights = projection_weights(y.shape());
    loss = reduce_to_scalar(y, weights);
  }
  backward(loss);

  auto evaluate = [&](const std::vector<Tensor<double>>& probe) {
    NoGradGuard no_grad;
    return reduce_to_scalar(fn(probe), weights).item();
  };

  GradCheckReport report;
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    if (!check[i]) continue;
    const auto analytic = leaves[i].grad();
    std::vector<Tensor<double>> probe = leaves;
    for (std::int64_t e = 0; e < leaves[i].numel(); ++e) {
      std::vector<double> values(leaves[i].data().begin(), leaves[i].data().end());
      const double x0 = values[static_cast<std::size_t>(e)];
      values[static_cast<std::size_t>(e)] = x0 + step;
      probe[i] = Tensor<double>::from(leaves[i].shape(), values);
      const double f_plus = evaluate(probe);
      values[static_cast<std::size_t>(e)] = x0 - step;
      probe[i] = Tensor<double>::from(leaves[i].shape(), values);
      const double f_minus = evaluate(probe);

      const double numeric = (f_plus - f_minus) / (2.0 * step);
      const double a = analytic[static_cast<std::size_t>(e)];
      const double denom = std::max({std::abs(a), std::abs(numeric), kGradCheckFloor});
      const double err = std::abs(a - numeric) / denom;
      if (err > report.max_rel_error || report.worst_input < 0) {
        report.max_rel_error = std::max(report.max_rel_error, err);
        report.worst_input = static_cast<int>(i);
        report.worst_element = e;
        report.analytic = a;
        report.numeric = numeric;
      }
    }
    probe[i] = leaves[i];
  }
  report.passed = report.max_rel_error < tolerance;
  return report;
}

}  // namespace bhnd
