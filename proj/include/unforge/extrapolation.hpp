#pragma once

#include "unforge/param_store.hpp"

#include <optional>

namespace unforge {

inline constexpr Real kDefaultAlpha = 4.0;
inline constexpr Real kDefaultEta = 0.675;

struct ExtrapolationConfig {
  Real alpha = kDefaultAlpha;
  Real eta = kDefaultEta;

  // Throws ConfigError unless alpha > 0 and 0 < eta <= 1.
  void validate() const;
};

// (1 + alpha) * theta_ref - alpha * theta_mem. alpha = 0 returns theta_ref.
ParamStore mox_extrapolate(const ParamStore& theta_ref, const ParamStore& theta_mem, Real alpha);

// eta * theta_cur + (1 - eta) * previous ensemble; theta_cur when there is
// no history yet.
ParamStore momentum_update(const ParamStore& theta_cur, const std::optional<ParamStore>& prev_ensemble, Real eta);

// Negated task vector of a model fine-tuned on the forget set alone.
ParamStore task_vector_unlearn(const ParamStore& theta_ref, const ParamStore& theta_ft_on_forget, Real alpha);

// (theta - theta_ref) / ||theta - theta_ref||. Throws DegenerateDirection
// when the two stores are equal.
ParamStore direction_delta(const ParamStore& theta, const ParamStore& theta_ref);
Real direction_cosine(const ParamStore& d1, const ParamStore& d2);

}  // namespace unforge
