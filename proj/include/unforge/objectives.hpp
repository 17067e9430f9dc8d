#pragma once

#include "unforge/autodiff.hpp"
#include "unforge/corpus.hpp"
#include "unforge/model.hpp"

#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace unforge {

enum class Variant {
  CE,
  GA,
  GAD,
  KlBaseline,
  NPO,
  MoxMemCE,
  MoxMemPO,
  MoxTargetedCE,
  MoxTargetedPO,
  WeightedGD,
  WeightedGA,
  WeightedNPO,
};

std::string_view variant_name(Variant v);
// Accepts the names printed by variant_name; throws ConfigError otherwise.
Variant variant_from_name(std::string_view name);

struct ObjectiveSpec {
  Variant variant = Variant::CE;
  // NPO/PO temperature, or the forget weight of the weighted variants.
  Real beta = 0.1;
  Real kl_weight = 1.0;
  // Weight of the refusal-target term of the targeted variants.
  Real target_weight = 1.0;
  // Weight of the NPO term in weighted_npo.
  Real forget_weight = 1.0;

  bool needs_reference() const;
  bool needs_retain() const;
  bool needs_forget() const;
  bool needs_targets() const;
  // Throws ConfigError for beta <= 0 or negative weights.
  void validate() const;
};

// Pairs of one optimization step. Pointers refer to caller-owned pairs.
struct Batch {
  std::vector<const QAPair*> retain;
  std::vector<const QAPair*> forget;
  // Forget prompts paired with the refusal target, aligned with forget.
  std::vector<const QAPair*> targeted;

  bool empty() const { return retain.empty() && forget.empty() && targeted.empty(); }
};

// Cached forward results of the frozen reference model.
class ReferenceModel {
 public:
  ReferenceModel(const Transformer& model, ParamStore theta_ref);

  const ParamStore& params() const noexcept { return theta_; }
  // Softmax rows predicting each answer token of seq.
  const RowMatrix& answer_distribution(const TokenSeq& seq);
  // Sum over answer positions of p log p.
  Real answer_neg_entropy(const TokenSeq& seq);
  Real sequence_log_prob(const TokenSeq& seq);

 private:
  struct Entry {
    RowMatrix probs;
    Real neg_entropy = 0.0;
    Real log_prob = 0.0;
  };
  const Entry& entry(const TokenSeq& seq);

  const Transformer& model_;
  ParamStore theta_;
  std::map<std::vector<int>, Entry> cache_;
};

// Everything a loss needs besides the batch. `graph` must be bound to theta.
struct LossContext {
  Graph& graph;
  const Transformer& model;
  ReferenceModel* reference = nullptr;
};

// Mean over pairs of the per-pair mean answer-token negative log-likelihood.
Var loss_ce(const LossContext& ctx, std::span<const QAPair* const> pairs);
// Negated forget-set CE.
Var loss_ga(const LossContext& ctx, const Batch& batch);
// CE(retain) - CE(forget).
Var loss_gad(const LossContext& ctx, const Batch& batch);
// Mean over retain pairs of the mean per-position KL(ref || theta).
Var loss_kl_retain(const LossContext& ctx, const Batch& batch);
// -(2/beta) mean log sigmoid(-beta * length-normalized log ratio) on forget.
Var loss_npo(const LossContext& ctx, const Batch& batch, Real beta);
// GA on forget plus KL to the reference on retain.
Var loss_kl_baseline(const LossContext& ctx, const Batch& batch, Real kl_weight);
// Memorization: CE(forget) + kl_weight * KL(retain).
Var loss_mox_mem_ce(const LossContext& ctx, const Batch& batch, Real kl_weight);
// Memorization: negated NPO sum + kl_weight * KL(retain).
Var loss_mox_mem_po(const LossContext& ctx, const Batch& batch, Real beta, Real kl_weight);
// Mean CE of the refusal target on forget prompts.
Var target_term(const LossContext& ctx, const Batch& batch);
// Memorization loss (CE or PO form) minus target_weight * target_term.
// The memorization model moves away from the refusal so that extrapolating
// past the reference moves toward it.
Var loss_targeted(const LossContext& ctx, const Batch& batch, Variant memorization, Real beta, Real kl_weight,
                  Real target_weight);
// CE(retain) + sign * beta * CE(forget).
Var loss_weighted(const LossContext& ctx, const Batch& batch, int sign, Real beta);
// CE(retain) + weight * NPO(forget) at temperature beta.
Var loss_weighted_npo(const LossContext& ctx, const Batch& batch, Real beta, Real weight);

// Dispatches on spec.variant.
Var build_loss(const LossContext& ctx, const Batch& batch, const ObjectiveSpec& spec);

struct LossAndGrad {
  Real loss = 0.0;
  GradStore grad;
};

Real objective_value(const Transformer& model, const ParamStore& theta, ReferenceModel* reference,
                     const Batch& batch, const ObjectiveSpec& spec);
LossAndGrad objective_grad(const Transformer& model, const ParamStore& theta, ReferenceModel* reference,
                           const Batch& batch, const ObjectiveSpec& spec);

// Which data each loss term touches and whether minimizing the term raises
// that data's negative log-likelihood.
enum class TermData { Retain, Forget, Target };
struct TermInfo {
  std::string name;
  TermData data;
  bool raises_nll;
};
std::vector<TermInfo> objective_terms(Variant v);
bool is_mox_family(Variant v);

}  // namespace unforge
