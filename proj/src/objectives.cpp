#include "unforge/objectives.hpp"

#include "unforge/errors.hpp"

#include <array>
#include <cmath>

namespace unforge {

namespace {

struct VariantName {
  Variant v;
  std::string_view name;
};

constexpr std::array<VariantName, 12> kVariantNames{{
    {Variant::CE, "ce"},
    {Variant::GA, "ga"},
    {Variant::GAD, "gad"},
    {Variant::KlBaseline, "kl"},
    {Variant::NPO, "npo"},
    {Variant::MoxMemCE, "mox_mem_ce"},
    {Variant::MoxMemPO, "mox_mem_po"},
    {Variant::MoxTargetedCE, "mox_targeted_ce"},
    {Variant::MoxTargetedPO, "mox_targeted_po"},
    {Variant::WeightedGD, "weighted_gd"},
    {Variant::WeightedGA, "weighted_ga"},
    {Variant::WeightedNPO, "weighted_npo"},
}};

void require_nonempty(std::span<const QAPair* const> pairs, const char* what) {
  if (pairs.empty()) throw ArgumentError(std::string(what) + " pairs must be non-empty");
}

ReferenceModel& require_reference(const LossContext& ctx) {
  if (!ctx.reference) throw ArgumentError("objective needs a reference model");
  return *ctx.reference;
}

Var mean_of(const std::vector<Var>& terms) { return (1.0 / static_cast<Real>(terms.size())) * add_n(terms); }

// Per-pair mean negative log-likelihood of the answer tokens.
Var pair_nll(const LossContext& ctx, const TokenSeq& seq) {
  Var lp = ctx.model.answer_log_probs(ctx.graph, seq);
  const auto answer = seq.answer_tokens();
  std::vector<Index> rows(answer.size()), cols(answer.size());
  for (std::size_t i = 0; i < answer.size(); ++i) {
    rows[i] = static_cast<Index>(i);
    cols[i] = answer[i];
  }
  return -mean(pick(lp, rows, cols));
}

}  // namespace

std::string_view variant_name(Variant v) {
  for (const auto& e : kVariantNames)
    if (e.v == v) return e.name;
  return "unknown";
}

Variant variant_from_name(std::string_view name) {
  for (const auto& e : kVariantNames)
    if (e.name == name) return e.v;
  throw ConfigError("unknown objective '" + std::string(name) + "'");
}

bool ObjectiveSpec::needs_reference() const {
  switch (variant) {
    case Variant::KlBaseline:
    case Variant::NPO:
    case Variant::MoxMemPO:
    case Variant::MoxTargetedPO:
    case Variant::WeightedNPO:
      return true;
    case Variant::MoxMemCE:
    case Variant::MoxTargetedCE:
      return kl_weight > 0.0;
    default:
      return false;
  }
}

bool ObjectiveSpec::needs_retain() const {
  switch (variant) {
    case Variant::GAD:
    case Variant::KlBaseline:
    case Variant::WeightedGD:
    case Variant::WeightedGA:
    case Variant::WeightedNPO:
      return true;
    case Variant::MoxMemCE:
    case Variant::MoxMemPO:
    case Variant::MoxTargetedCE:
    case Variant::MoxTargetedPO:
      return kl_weight > 0.0;
    default:
      return false;
  }
}

bool ObjectiveSpec::needs_forget() const { return variant != Variant::CE; }

bool ObjectiveSpec::needs_targets() const {
  return variant == Variant::MoxTargetedCE || variant == Variant::MoxTargetedPO;
}

void ObjectiveSpec::validate() const {
  if (!(beta > 0.0) || !std::isfinite(beta)) throw ConfigError("beta must be positive");
  if (!(kl_weight >= 0.0)) throw ConfigError("kl_weight must be non-negative");
  if (!(target_weight >= 0.0)) throw ConfigError("target_weight must be non-negative");
  if (!(forget_weight >= 0.0)) throw ConfigError("forget_weight must be non-negative");
}

ReferenceModel::ReferenceModel(const Transformer& model, ParamStore theta_ref)
    : model_(model), theta_(std::move(theta_ref)) {
  model_.check_params(theta_);
}

const ReferenceModel::Entry& ReferenceModel::entry(const TokenSeq& seq) {
  auto it = cache_.find(seq.tokens);
  if (it != cache_.end()) return it->second;
  Graph g;
  g.bind(theta_);
  Var lp = model_.answer_log_probs(g, seq);
  Entry e;
  e.probs = lp.value().array().exp().matrix();
  e.neg_entropy = e.probs.cwiseProduct(lp.value()).sum();
  const auto answer = seq.answer_tokens();
  for (std::size_t i = 0; i < answer.size(); ++i) e.log_prob += lp.value()(static_cast<Index>(i), answer[i]);
  return cache_.emplace(seq.tokens, std::move(e)).first->second;
}

const RowMatrix& ReferenceModel::answer_distribution(const TokenSeq& seq) { return entry(seq).probs; }
Real ReferenceModel::answer_neg_entropy(const TokenSeq& seq) { return entry(seq).neg_entropy; }
Real ReferenceModel::sequence_log_prob(const TokenSeq& seq) { return entry(seq).log_prob; }

Var loss_ce(const LossContext& ctx, std::span<const QAPair* const> pairs) {
  require_nonempty(pairs, "cross-entropy");
  std::vector<Var> terms;
  terms.reserve(pairs.size());
  for (const QAPair* qa : pairs) terms.push_back(pair_nll(ctx, qa->sequence()));
  return mean_of(terms);
}

Var loss_ga(const LossContext& ctx, const Batch& batch) {
  require_nonempty(batch.forget, "forget");
  return -loss_ce(ctx, batch.forget);
}

Var loss_gad(const LossContext& ctx, const Batch& batch) {
  require_nonempty(batch.retain, "retain");
  require_nonempty(batch.forget, "forget");
  return loss_ce(ctx, batch.retain) - loss_ce(ctx, batch.forget);
}

Var loss_kl_retain(const LossContext& ctx, const Batch& batch) {
  require_nonempty(batch.retain, "retain");
  ReferenceModel& ref = require_reference(ctx);
  std::vector<Var> terms;
  terms.reserve(batch.retain.size());
  for (const QAPair* qa : batch.retain) {
    const TokenSeq seq = qa->sequence();
    const RowMatrix& p_ref = ref.answer_distribution(seq);
    const Real n = static_cast<Real>(p_ref.rows());
    Var lp = ctx.model.answer_log_probs(ctx.graph, seq);
    // KL(ref || theta) = sum p_ref log p_ref - sum p_ref log p_theta
    terms.push_back((-1.0 / n) * weighted_sum(lp, p_ref) + ctx.graph.scalar(ref.answer_neg_entropy(seq) / n));
  }
  return mean_of(terms);
}

Var loss_npo(const LossContext& ctx, const Batch& batch, Real beta) {
  require_nonempty(batch.forget, "forget");
  if (!(beta > 0.0)) throw ConfigError("beta must be positive");
  ReferenceModel& ref = require_reference(ctx);
  std::vector<Var> terms;
  terms.reserve(batch.forget.size());
  for (const QAPair* qa : batch.forget) {
    const TokenSeq seq = qa->sequence();
    const Real len = static_cast<Real>(seq.answer_positions().size());
    Var log_ratio = (1.0 / len) * ctx.model.sequence_log_prob(ctx.graph, seq) +
                    ctx.graph.scalar(-ref.sequence_log_prob(seq) / len);
    terms.push_back(log_sigmoid(-beta * log_ratio));
  }
  return (-2.0 / beta) * mean_of(terms);
}

Var loss_kl_baseline(const LossContext& ctx, const Batch& batch, Real kl_weight) {
  Var ga = loss_ga(ctx, batch);
  if (kl_weight == 0.0) return ga;
  return ga + kl_weight * loss_kl_retain(ctx, batch);
}

Var loss_mox_mem_ce(const LossContext& ctx, const Batch& batch, Real kl_weight) {
  Var mem = loss_ce(ctx, batch.forget);
  if (kl_weight == 0.0) return mem;
  return mem + kl_weight * loss_kl_retain(ctx, batch);
}

Var loss_mox_mem_po(const LossContext& ctx, const Batch& batch, Real beta, Real kl_weight) {
  Var mem = -loss_npo(ctx, batch, beta);
  if (kl_weight == 0.0) return mem;
  return mem + kl_weight * loss_kl_retain(ctx, batch);
}

Var target_term(const LossContext& ctx, const Batch& batch) {
  if (batch.targeted.empty()) throw ArgumentError("targeted objective needs target pairs");
  return loss_ce(ctx, batch.targeted);
}

Var loss_targeted(const LossContext& ctx, const Batch& batch, Variant memorization, Real beta, Real kl_weight,
                  Real target_weight) {
  Var mem = [&] {
    switch (memorization) {
      case Variant::MoxMemCE:
      case Variant::MoxTargetedCE:
        return loss_mox_mem_ce(ctx, batch, kl_weight);
      case Variant::MoxMemPO:
      case Variant::MoxTargetedPO:
        return loss_mox_mem_po(ctx, batch, beta, kl_weight);
      default:
        throw ArgumentError("targeted memorization must be a CE or PO memorization objective");
    }
  }();
  return mem - target_weight * target_term(ctx, batch);
}

Var loss_weighted(const LossContext& ctx, const Batch& batch, int sign, Real beta) {
  if (sign != 1 && sign != -1) throw ArgumentError("weighted objective sign must be +1 or -1");
  require_nonempty(batch.retain, "retain");
  require_nonempty(batch.forget, "forget");
  Var r = loss_ce(ctx, batch.retain);
  if (beta == 0.0) return r;
  return r + (static_cast<Real>(sign) * beta) * loss_ce(ctx, batch.forget);
}

Var loss_weighted_npo(const LossContext& ctx, const Batch& batch, Real beta, Real weight) {
  require_nonempty(batch.retain, "retain");
  Var r = loss_ce(ctx, batch.retain);
  if (weight == 0.0) return r;
  return r + weight * loss_npo(ctx, batch, beta);
}

Var build_loss(const LossContext& ctx, const Batch& batch, const ObjectiveSpec& spec) {
  spec.validate();
  if (batch.empty()) throw ArgumentError("empty batch");
  switch (spec.variant) {
    case Variant::CE: {
      std::vector<const QAPair*> all(batch.retain);
      all.insert(all.end(), batch.forget.begin(), batch.forget.end());
      return loss_ce(ctx, all);
    }
    case Variant::GA: return loss_ga(ctx, batch);
    case Variant::GAD: return loss_gad(ctx, batch);
    case Variant::KlBaseline: return loss_kl_baseline(ctx, batch, spec.kl_weight);
    case Variant::NPO: return loss_npo(ctx, batch, spec.beta);
    case Variant::MoxMemCE: return loss_mox_mem_ce(ctx, batch, spec.kl_weight);
    case Variant::MoxMemPO: return loss_mox_mem_po(ctx, batch, spec.beta, spec.kl_weight);
    case Variant::MoxTargetedCE:
    case Variant::MoxTargetedPO:
      return loss_targeted(ctx, batch, spec.variant, spec.beta, spec.kl_weight, spec.target_weight);
    case Variant::WeightedGD: return loss_weighted(ctx, batch, +1, spec.beta);
    case Variant::WeightedGA: return loss_weighted(ctx, batch, -1, spec.beta);
    case Variant::WeightedNPO: return loss_weighted_npo(ctx, batch, spec.beta, spec.forget_weight);
  }
  throw ConfigError("unhandled objective variant");
}

Real objective_value(const Transformer& model, const ParamStore& theta, ReferenceModel* reference,
                     const Batch& batch, const ObjectiveSpec& spec) {
  Graph g;
  g.bind(theta);
  return build_loss(LossContext{g, model, reference}, batch, spec).item();
}

LossAndGrad objective_grad(const Transformer& model, const ParamStore& theta, ReferenceModel* reference,
                           const Batch& batch, const ObjectiveSpec& spec) {
  model.check_params(theta);
  Graph g;
  g.bind(theta);
  Var loss = build_loss(LossContext{g, model, reference}, batch, spec);
  LossAndGrad out;
  out.loss = loss.item();
  out.grad = g.backward(loss);
  return out;
}

std::vector<TermInfo> objective_terms(Variant v) {
  const TermInfo ce_forget{"ce(forget)", TermData::Forget, false};
  const TermInfo ga_forget{"-ce(forget)", TermData::Forget, true};
  const TermInfo npo_forget{"npo(forget)", TermData::Forget, true};
  const TermInfo po_mem_forget{"-npo(forget)", TermData::Forget, false};
  const TermInfo ce_retain{"ce(retain)", TermData::Retain, false};
  const TermInfo kl_retain{"kl(retain)", TermData::Retain, false};
  const TermInfo refusal{"-ce(target)", TermData::Target, true};
  switch (v) {
    case Variant::CE: return {ce_retain, ce_forget};
    case Variant::GA: return {ga_forget};
    case Variant::GAD: return {ce_retain, ga_forget};
    case Variant::KlBaseline: return {ga_forget, kl_retain};
    case Variant::NPO: return {npo_forget};
    case Variant::MoxMemCE: return {ce_forget, kl_retain};
    case Variant::MoxMemPO: return {po_mem_forget, kl_retain};
    case Variant::MoxTargetedCE: return {ce_forget, kl_retain, refusal};
    case Variant::MoxTargetedPO: return {po_mem_forget, kl_retain, refusal};
    case Variant::WeightedGD: return {ce_retain, ce_forget};
    case Variant::WeightedGA: return {ce_retain, ga_forget};
    case Variant::WeightedNPO: return {ce_retain, npo_forget};
  }
  return {};
}

bool is_mox_family(Variant v) {
  return v == Variant::MoxMemCE || v == Variant::MoxMemPO || v == Variant::MoxTargetedCE ||
         v == Variant::MoxTargetedPO;
}

}  // namespace unforge
