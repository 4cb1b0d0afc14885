#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bhnd/grad_check.h"

namespace bhnd {

struct GradSuiteCase {
  std::string layer;
  std::string shapes;
  GradCheckReport report;
};

struct GradSuiteResult {
  std::vector<GradSuiteCase> cases;
  double max_rel_error = 0.0;
  double seconds = 0.0;
  bool passed = true;
};

/// Gradient checks in float64 for every differentiable op and layer, each on
/// `shapes_per_layer` random shapes drawn from `seed`.
GradSuiteResult run_grad_suite(std::uint64_t seed = 0, double tolerance = 1e-4, int shapes_per_layer = 5);

}  // namespace bhnd
