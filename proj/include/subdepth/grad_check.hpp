#pragma once

#include <functional>
#include <vector>

#include "subdepth/tensor.hpp"

namespace subdepth {

/// Builds a scalar from a leaf recorded in the supplied graph.
using ScalarFn = std::function<Tensor(Graph&, const Tensor&)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
};

/// Compares reverse-mode gradients against central differences.
///
/// The relative error at coordinate i is
/// |analytic_i - numeric_i| / max(1, |numeric_i|). Each probe evaluates `fn`
/// in a fresh graph. Throws DiffError when a probe is not finite or eps <= 0.
GradCheckResult grad_check(const ScalarFn& fn, const Shape& shape, const std::vector<double>& point,
                           double eps = 1e-4);

}  // namespace subdepth
