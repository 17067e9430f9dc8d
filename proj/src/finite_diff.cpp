#include "unforge/finite_diff.hpp"

#include "unforge/errors.hpp"

#include <algorithm>
#include <cmath>

namespace unforge {

GradStore finite_diff_grad(const ScalarFn& f, const ParamStore& theta, Real eps) {
  if (!(eps > 0.0)) throw ArgumentError("finite_diff_grad: eps must be positive");
  ParamStore probe = theta;
  GradStore out = ParamStore::zeros_like(theta);
  for (Index i = 0; i < theta.total_len(); ++i) {
    const Real x = theta.flat()[i];
    probe.flat()[i] = x + eps;
    const Real up = f(probe);
    probe.flat()[i] = x - eps;
    const Real down = f(probe);
    probe.flat()[i] = x;
    out.flat()[i] = (up - down) / (2.0 * eps);
  }
  return out;
}

Real max_relative_error(const GradStore& a, const GradStore& b, Real floor) {
  require_congruent(a, b, "max_relative_error");
  Real worst = 0.0;
  for (Index i = 0; i < a.total_len(); ++i) {
    const Real denom = std::max(std::abs(b.flat()[i]), floor);
    worst = std::max(worst, std::abs(a.flat()[i] - b.flat()[i]) / denom);
  }
  return worst;
}

}  // namespace unforge
