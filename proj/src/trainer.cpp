#include "unforge/trainer.hpp"

#include "unforge/errors.hpp"
#include "unforge/rng.hpp"

#include <cmath>
#include <numeric>
#include <ostream>

namespace unforge {

namespace {

std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  rng.shuffle(std::span<std::size_t>(idx));
  return idx;
}

// Endless retain stream, reshuffled on every pass.
class CyclicSampler {
 public:
  CyclicSampler(const std::vector<QAPair>& pairs, std::uint64_t seed) : pairs_(pairs), rng_(seed) {}

  std::vector<const QAPair*> take(std::size_t k) {
    std::vector<const QAPair*> out;
    if (pairs_.empty()) return out;
    out.reserve(k);
    while (out.size() < k) {
      if (pos_ == order_.size()) {
        order_ = shuffled_indices(pairs_.size(), rng_);
        pos_ = 0;
      }
      out.push_back(&pairs_[order_[pos_++]]);
    }
    return out;
  }

 private:
  const std::vector<QAPair>& pairs_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

bool uses_union(const ObjectiveSpec& spec) { return spec.variant == Variant::CE; }

std::size_t effective_batch(std::size_t n, int batch_size) {
  if (batch_size <= 0 || static_cast<std::size_t>(batch_size) > n) return n;
  return static_cast<std::size_t>(batch_size);
}

void write_optional(std::ostream& out, const std::optional<Real>& v) {
  if (v) out << *v;
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("epochs must be non-negative");
  if (batch_size < 0) throw ConfigError("batch_size must be non-negative");
  if (!(lr_peak > 0.0) || !std::isfinite(lr_peak)) throw ConfigError("lr_peak must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
  if (!(warmup_epochs >= 0.0)) throw ConfigError("warmup_epochs must be non-negative");
  if (schedule == Schedule::WarmupLinear && epochs > 0 && !(warmup_epochs < epochs))
    throw ConfigError("warmup_epochs must be smaller than epochs");
  if (retain_per_forget < 1) throw ConfigError("retain_per_forget must be at least 1");
  if (!(clip_norm >= 0.0)) throw ConfigError("clip_norm must be non-negative");
  objective.validate();
}

OptimState OptimState::zeros_like(const ParamStore& theta) {
  return OptimState{ParamStore::zeros_like(theta), ParamStore::zeros_like(theta), 0};
}

Real lr_at(std::int64_t step, std::int64_t total_steps, std::int64_t warmup_steps, Real lr_peak) {
  if (step < 0 || step >= total_steps) throw ArgumentError("lr_at step out of range");
  if (step < warmup_steps)
    return lr_peak * static_cast<Real>(step + 1) / static_cast<Real>(warmup_steps);
  return lr_peak * static_cast<Real>(total_steps - step) / static_cast<Real>(total_steps - warmup_steps);
}

void adamw_step(ParamStore& theta, const GradStore& grads, OptimState& state, Real lr, Real weight_decay) {
  require_congruent(theta, grads, "adamw_step");
  require_congruent(theta, state.m, "adamw_step");
  require_congruent(theta, state.v, "adamw_step");
  if (!grads.all_finite()) throw DivergenceError(state.t + 1, "non-finite gradient");
  constexpr Real b1 = 0.9, b2 = 0.999, eps = 1e-8;
  state.t += 1;
  const Real c1 = 1.0 - std::pow(b1, static_cast<Real>(state.t));
  const Real c2 = 1.0 - std::pow(b2, static_cast<Real>(state.t));
  Vector& th = theta.flat();
  Vector& m = state.m.flat();
  Vector& v = state.v.flat();
  const Vector& g = grads.flat();
  const Real decay = 1.0 - lr * weight_decay;
  for (Index i = 0; i < th.size(); ++i) {
    m[i] = b1 * m[i] + (1.0 - b1) * g[i];
    v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
    const Real mhat = m[i] / c1;
    const Real vhat = v[i] / c2;
    th[i] = th[i] * decay - lr * mhat / (std::sqrt(vhat) + eps);
  }
}

void sgd_step(ParamStore& theta, const GradStore& grads, std::int64_t step, Real lr, Real weight_decay) {
  require_congruent(theta, grads, "sgd_step");
  if (!grads.all_finite()) throw DivergenceError(step, "non-finite gradient");
  theta.flat() = theta.flat() * (1.0 - lr * weight_decay) - lr * grads.flat();
}

void TrainTrace::write_csv(std::ostream& out) const {
  const auto old_precision = out.precision(17);
  out << "step,epoch,lr,loss,grad_norm,dist_to_ref,cos_to_ref,collapse_retain,collapse_forget\n";
  for (const auto& r : rows) {
    out << r.step << ',' << r.epoch << ',' << r.lr << ',' << r.loss << ',' << r.grad_norm << ',' << r.dist_to_ref
        << ',' << r.cos_to_ref << ',';
    write_optional(out, r.collapse_retain);
    out << ',';
    write_optional(out, r.collapse_forget);
    out << '\n';
  }
  out.precision(old_precision);
}

std::int64_t steps_per_epoch(const DatasetSplit& data, const TrainConfig& config) {
  const std::size_t n = uses_union(config.objective) ? data.retain.size() + data.forget.size() : data.forget.size();
  if (n == 0) return 0;
  const std::size_t b = effective_batch(n, config.batch_size);
  return static_cast<std::int64_t>((n + b - 1) / b);
}

TrainResult train(const Transformer& model, const ParamStore& theta0, const ParamStore* theta_ref,
                  const DatasetSplit& data, const TrainConfig& config, const TrainHooks& hooks) {
  config.validate();
  model.check_params(theta0);
  const ObjectiveSpec& spec = config.objective;
  const ParamStore& anchor = theta_ref ? *theta_ref : theta0;
  model.check_params(anchor);
  if (spec.needs_reference() && !theta_ref) throw ArgumentError("objective needs a reference model");
  if (spec.needs_retain() && data.retain.empty()) throw ArgumentError("objective needs retain pairs");
  if (spec.needs_forget() && data.forget.empty()) throw ArgumentError("objective needs forget pairs");

  TrainResult result;
  result.theta = theta0;
  const std::int64_t per_epoch = steps_per_epoch(data, config);
  const std::int64_t total = per_epoch * config.epochs;
  if (total == 0) return result;
  const std::int64_t warmup =
      config.schedule == Schedule::Constant ? 0 : std::llround(config.warmup_epochs * static_cast<Real>(per_epoch));

  std::optional<ReferenceModel> reference;
  if (theta_ref && spec.needs_reference()) reference.emplace(model, *theta_ref);

  std::vector<QAPair> pool;
  if (uses_union(spec)) {
    pool = data.retain;
    pool.insert(pool.end(), data.forget.begin(), data.forget.end());
  }
  const std::vector<QAPair>& primary = uses_union(spec) ? pool : data.forget;
  std::vector<QAPair> targeted;
  if (spec.needs_targets()) targeted = make_targeted(data.forget, config.target_text, model.config().ctx_len);

  Rng order_rng(derive_seed(config.seed, 11));
  CyclicSampler retain_stream(data.retain, derive_seed(config.seed, 12));
  OptimState state = OptimState::zeros_like(theta0);
  const std::size_t bsz = effective_batch(primary.size(), config.batch_size);

  ParamStore& theta = result.theta;
  std::int64_t step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const std::vector<std::size_t> order = shuffled_indices(primary.size(), order_rng);
    for (std::size_t start = 0; start < order.size(); start += bsz, ++step) {
      const std::size_t end = std::min(order.size(), start + bsz);
      Batch batch;
      for (std::size_t k = start; k < end; ++k) {
        const std::size_t i = order[k];
        if (uses_union(spec)) {
          batch.retain.push_back(&primary[i]);
        } else {
          batch.forget.push_back(&primary[i]);
          if (!targeted.empty()) batch.targeted.push_back(&targeted[i]);
        }
      }
      if (!uses_union(spec) && spec.needs_retain()) batch.retain = retain_stream.take((end - start) * static_cast<std::size_t>(config.retain_per_forget));

      TraceRow row;
      row.step = step;
      row.epoch = epoch;
      row.lr = config.schedule == Schedule::Constant ? config.lr_peak : lr_at(step, total, warmup, config.lr_peak);
      LossAndGrad lg = objective_grad(model, theta, reference ? &*reference : nullptr, batch, spec);
      row.loss = lg.loss;
      row.grad_norm = l2_norm(lg.grad);
      if (!std::isfinite(lg.loss) || !std::isfinite(row.grad_norm)) {
        result.divergence = Divergence{step, !std::isfinite(lg.loss) ? "non-finite loss" : "non-finite gradient"};
        result.steps = step;
        return result;
      }
      if (config.clip_norm > 0.0 && row.grad_norm > config.clip_norm)
        lg.grad.flat() *= config.clip_norm / row.grad_norm;

      ParamStore next = theta;
      if (config.optimizer == OptimizerKind::AdamW)
        adamw_step(next, lg.grad, state, row.lr, config.weight_decay);
      else
        sgd_step(next, lg.grad, step, row.lr, config.weight_decay);
      if (!next.all_finite()) {
        result.divergence = Divergence{step, "non-finite parameters"};
        result.steps = step;
        return result;
      }
      theta = std::move(next);

      row.dist_to_ref = l2_distance(theta, anchor);
      const Real na = l2_norm(theta), nb = l2_norm(anchor);
      row.cos_to_ref = na > 0.0 && nb > 0.0 ? dot(theta, anchor) / (na * nb) : 0.0;
      const bool epoch_end = end == order.size();
      const bool sample = config.eval_every == 0 ? epoch_end : config.eval_every > 0 && (step + 1) % config.eval_every == 0;
      if (sample) {
        if (hooks.retain_contexts && !hooks.retain_contexts->empty())
          row.collapse_retain = collapse_metric(model, theta, *hooks.retain_contexts);
        if (hooks.forget_contexts && !hooks.forget_contexts->empty())
          row.collapse_forget = collapse_metric(model, theta, *hooks.forget_contexts);
      }
      result.trace.rows.push_back(row);
    }
    if (hooks.on_epoch_end) hooks.on_epoch_end(epoch, theta);
  }
  result.steps = step;
  return result;
}

TrainResult finetune_reference(const Transformer& model, const DatasetSplit& data, TrainConfig config) {
  config.objective = ObjectiveSpec{};
  return train(model, model.init_params(), nullptr, data, config);
}

TrainResult retrain_oracle(const Transformer& model, const DatasetSplit& data, TrainConfig config) {
  config.objective = ObjectiveSpec{};
  DatasetSplit retain_only;
  retain_only.retain = data.retain;
  retain_only.heldout_world = data.heldout_world;
  return train(model, model.init_params(), nullptr, retain_only, config);
}

}  // namespace unforge
