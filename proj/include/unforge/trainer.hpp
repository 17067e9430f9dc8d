#pragma once

#include "unforge/corpus.hpp"
#include "unforge/eval.hpp"
#include "unforge/model.hpp"
#include "unforge/objectives.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace unforge {

enum class OptimizerKind { AdamW, SGD };
enum class Schedule { WarmupLinear, Constant };

struct TrainConfig {
  int epochs = 10;
  // 0 means full batch.
  int batch_size = 16;
  Real lr_peak = 3e-4;
  Real weight_decay = 0.01;
  Real warmup_epochs = 1.0;
  std::uint64_t seed = 0;
  ObjectiveSpec objective;
  // Collapse sampling period in steps; 0 samples at each epoch end, < 0 never.
  int eval_every = 0;
  OptimizerKind optimizer = OptimizerKind::AdamW;
  Schedule schedule = Schedule::WarmupLinear;
  // Global gradient-norm clip; 0 disables.
  Real clip_norm = 0.0;
  // Retain pairs drawn per forget pair by forget-driven objectives.
  int retain_per_forget = 1;
  std::string target_text{kRefusalTarget};

  // Throws ConfigError on any violated invariant.
  void validate() const;
};

struct OptimState {
  GradStore m;
  GradStore v;
  std::int64_t t = 0;

  static OptimState zeros_like(const ParamStore& theta);
};

// Linear warm-up to lr_peak, then linear decay towards 0. The first step of
// each phase already uses the incremented value.
Real lr_at(std::int64_t step, std::int64_t total_steps, std::int64_t warmup_steps, Real lr_peak);

// In-place AdamW with bias correction and decoupled decay. Throws
// DivergenceError (carrying state.t + 1) on a non-finite gradient.
void adamw_step(ParamStore& theta, const GradStore& grads, OptimState& state, Real lr, Real weight_decay);
void sgd_step(ParamStore& theta, const GradStore& grads, std::int64_t step, Real lr, Real weight_decay);

struct TraceRow {
  std::int64_t step = 0;
  int epoch = 0;
  Real lr = 0.0;
  Real loss = 0.0;
  Real grad_norm = 0.0;
  Real dist_to_ref = 0.0;
  Real cos_to_ref = 0.0;
  std::optional<Real> collapse_retain;
  std::optional<Real> collapse_forget;
};

struct TrainTrace {
  std::vector<TraceRow> rows;
  // Columns: step,epoch,lr,loss,grad_norm,dist_to_ref,cos_to_ref,
  // collapse_retain,collapse_forget; unsampled collapse cells are empty.
  void write_csv(std::ostream& out) const;
};

struct Divergence {
  std::int64_t step = 0;
  std::string reason;
};

struct TrainResult {
  ParamStore theta;
  TrainTrace trace;
  // Set when the loss, gradient or parameters became non-finite; theta is
  // then the last finite iterate.
  std::optional<Divergence> divergence;
  std::int64_t steps = 0;
};

struct TrainHooks {
  // Collapse is only recorded when these are set.
  const std::vector<CollapseContext>* retain_contexts = nullptr;
  const std::vector<CollapseContext>* forget_contexts = nullptr;
  // Called after every epoch with the current parameters.
  std::function<void(int epoch, const ParamStore& theta)> on_epoch_end;
};

// Steps per epoch: over retain+forget for CE, over forget otherwise.
std::int64_t steps_per_epoch(const DatasetSplit& data, const TrainConfig& config);

// Runs config.objective from theta0. theta_ref anchors the divergence trace
// and feeds reference-based objectives; theta0 is used when absent.
TrainResult train(const Transformer& model, const ParamStore& theta0, const ParamStore* theta_ref,
                  const DatasetSplit& data, const TrainConfig& config, const TrainHooks& hooks = {});

// CE training from the model's initial parameters on retain and forget.
TrainResult finetune_reference(const Transformer& model, const DatasetSplit& data, TrainConfig config);
// Same initial parameters, retain pairs only.
TrainResult retrain_oracle(const Transformer& model, const DatasetSplit& data, TrainConfig config);

}  // namespace unforge
