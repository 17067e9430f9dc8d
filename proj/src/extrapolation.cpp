#include "unforge/extrapolation.hpp"

#include "unforge/errors.hpp"

#include <algorithm>
#include <cmath>

namespace unforge {

void ExtrapolationConfig::validate() const {
  if (!(alpha > 0.0) || !std::isfinite(alpha)) throw ConfigError("alpha must be positive");
  if (!(eta > 0.0 && eta <= 1.0)) throw ConfigError("eta must lie in (0, 1]");
}

ParamStore mox_extrapolate(const ParamStore& theta_ref, const ParamStore& theta_mem, Real alpha) {
  require_congruent(theta_ref, theta_mem, "mox_extrapolate");
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw ArgumentError("alpha must be non-negative");
  ParamStore out = theta_ref;
  Vector& o = out.flat();
  const Vector& m = theta_mem.flat();
  // theta_ref + alpha * (theta_ref - theta_mem): exact when the two agree.
  for (Index i = 0; i < o.size(); ++i) o[i] += alpha * (o[i] - m[i]);
  return out;
}

ParamStore momentum_update(const ParamStore& theta_cur, const std::optional<ParamStore>& prev_ensemble, Real eta) {
  if (!(eta > 0.0 && eta <= 1.0)) throw ArgumentError("eta must lie in (0, 1]");
  if (!prev_ensemble) return theta_cur;
  require_congruent(theta_cur, *prev_ensemble, "momentum_update");
  ParamStore out = theta_cur;
  Vector& o = out.flat();
  const Vector& p = prev_ensemble->flat();
  for (Index i = 0; i < o.size(); ++i) {
    const Real v = eta * o[i] + (1.0 - eta) * p[i];
    o[i] = std::clamp(v, std::min(o[i], p[i]), std::max(o[i], p[i]));
  }
  return out;
}

ParamStore task_vector_unlearn(const ParamStore& theta_ref, const ParamStore& theta_ft_on_forget, Real alpha) {
  return mox_extrapolate(theta_ref, theta_ft_on_forget, alpha);
}

ParamStore direction_delta(const ParamStore& theta, const ParamStore& theta_ref) {
  require_congruent(theta, theta_ref, "direction_delta");
  ParamStore out = axpy(1.0, theta, -1.0, theta_ref);
  const Real norm = l2_norm(out);
  if (!(norm > 0.0)) throw DegenerateDirection("direction_delta of identical models");
  out.flat() /= norm;
  return out;
}

Real direction_cosine(const ParamStore& d1, const ParamStore& d2) {
  require_congruent(d1, d2, "direction_cosine");
  return std::clamp(dot(d1, d2), -1.0, 1.0);
}

}  // namespace unforge
