#pragma once

#include "unforge/param_store.hpp"

#include <functional>

namespace unforge {

using ScalarFn = std::function<Real(const ParamStore&)>;

// Central differences (f(theta + eps e_i) - f(theta - eps e_i)) / (2 eps)
// for every coordinate. Independent of Graph; used to check backward.
GradStore finite_diff_grad(const ScalarFn& f, const ParamStore& theta, Real eps);

// max_i |a_i - b_i| / max(|b_i|, floor).
Real max_relative_error(const GradStore& a, const GradStore& b, Real floor = 1e-8);

}  // namespace unforge
