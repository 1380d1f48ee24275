#include "subdepth/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace subdepth {
namespace {

double evaluate(const ScalarFn& fn, const Shape& shape, std::vector<double> point, std::size_t coord) {
  Graph g;
  auto x = g.variable(shape, std::move(point));
  const double v = fn(g, x).item();
  if (!std::isfinite(v)) {
    throw DiffError("grad_check: non-finite value when probing coordinate " + std::to_string(coord));
  }
  return v;
}

}  // namespace

GradCheckResult grad_check(const ScalarFn& fn, const Shape& shape, const std::vector<double>& point,
                           double eps) {
  if (!(eps > 0.0)) throw DiffError("grad_check: eps must be positive");
  if (numel(shape) != point.size()) throw ShapeError("grad_check", to_string(shape) + " vs point");

  std::vector<double> analytic;
  {
    Graph g;
    auto x = g.variable(shape, point);
    auto y = fn(g, x);
    if (!std::isfinite(y.item())) throw DiffError("grad_check: non-finite value at the base point");
    analytic = g.backward(y).of(x);
  }

  GradCheckResult result;
  std::vector<double> probe = point;
  for (std::size_t i = 0; i < point.size(); ++i) {
    probe[i] = point[i] + eps;
    const double up = evaluate(fn, shape, probe, i);
    probe[i] = point[i] - eps;
    const double down = evaluate(fn, shape, probe, i);
    probe[i] = point[i];
    const double numeric = (up - down) / (2.0 * eps);
    const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(numeric));
    if (err > result.max_rel_error) {
      result.max_rel_error = err;
      result.worst_index = i;
    }
  }
  return result;
}

}  // namespace subdepth
