#pragma once

#include "unforge/corpus.hpp"
#include "unforge/model.hpp"

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace unforge {

struct RougeScore {
  Real f = 0.0;
  Real recall = 0.0;
};

// LCS-based ROUGE-L over token ids. Throws ArgumentError on empty input.
RougeScore rouge_l(std::span<const int> candidate, std::span<const int> reference);

// exp(mean log-probability of the answer tokens, eos included).
Real answer_probability(const Transformer& model, const ParamStore& theta, const QAPair& qa,
                        std::span<const int> answer);
inline Real answer_probability(const Transformer& model, const ParamStore& theta, const QAPair& qa) {
  return answer_probability(model, theta, qa, qa.answer);
}

// p_para / (p_para + mean(p_perturbed)).
Real truth_ratio_from_probs(Real p_para, std::span<const Real> p_perturbed);
Real truth_ratio(const Transformer& model, const ParamStore& theta, const QAPair& qa);

struct KSResult {
  Real statistic = 0.0;
  Real p_value = 1.0;
  int n = 0;
  int m = 0;
};

// Two-sample Kolmogorov-Smirnov test. Needs at least 5 values per sample.
// Small samples (n*m <= kKsExactLimit) get the exact permutation
// distribution; larger ones the asymptotic Kolmogorov series.
inline constexpr long kKsExactLimit = 10000;
KSResult ks_two_sample(std::span<const Real> a, std::span<const Real> b);
Real ks_asymptotic_p(Real d, int n, int m);
// P(D >= d) under exchangeability, counted over monotone lattice paths.
Real ks_exact_p(Real d, int n, int m);

// Fewest forget pairs the KS-based scores accept.
inline constexpr std::size_t kMinForgetPairs = 5;

Real forget_quality(const Transformer& model, const ParamStore& candidate, const ParamStore& oracle,
                    const std::vector<QAPair>& forget);
Real forget_quality(std::span<const Real> candidate_tr, std::span<const Real> oracle_tr);

// 0 when any value is 0.
Real harmonic_mean(std::span<const Real> values);

struct SetMetrics {
  Real rouge_f = 0.0;
  Real rouge_recall = 0.0;
  Real answer_prob = 0.0;
  Real truth_ratio = 0.0;
  Real nll = 0.0;  // mean per-token answer NLL
  std::vector<Real> truth_ratios;
};
SetMetrics evaluate_set(const Transformer& model, const ParamStore& theta, const std::vector<QAPair>& pairs);

// Harmonic mean of ROUGE-L F, answer probability and truth ratio on the
// retain and heldout sets.
Real model_utility(const Transformer& model, const ParamStore& theta, const std::vector<QAPair>& retain,
                   const std::vector<QAPair>& heldout);
Real model_utility(const SetMetrics& retain, const SetMetrics& heldout);
Real heldout_utility(const SetMetrics& heldout);

struct CollapseContext {
  std::vector<int> prefix;
  Vector q;  // empirical next-token distribution
};
inline constexpr int kCollapseContextCap = 500;
// Distinct answer-prefix contexts of length >= 2 with next-token counts,
// sampled down to cap with a seeded shuffle.
std::vector<CollapseContext> collapse_contexts(const std::vector<QAPair>& pairs, int vocab_size, std::uint64_t seed,
                                               int cap = kCollapseContextCap);
// Mean KL(q || p_theta) over contexts.
Real collapse_metric(const Transformer& model, const ParamStore& theta, std::span<const CollapseContext> contexts);

struct EvalReport {
  Real fq = 0.0;
  Real mu = 0.0;
  Real f_rl = 0.0;
  Real r_rl = 0.0;
  Real heldout_rl = 0.0;
  Real f_rl_recall = 0.0;
  Real r_rl_recall = 0.0;
  Real tr_forget = 0.0;
  Real tr_retain = 0.0;
  Real tr_heldout = 0.0;
  Real p_forget = 0.0;
  Real p_retain = 0.0;
  Real p_heldout = 0.0;
  Real nll_forget = 0.0;
  Real nll_retain = 0.0;
  Real heldout_utility = 0.0;
  Real collapse_retain = 0.0;
  Real collapse_forget = 0.0;
  Real divergence_from_ref = 0.0;
};

// Column names in the order used by to_csv_row and to_json.
const std::vector<std::string>& eval_report_columns();
std::vector<Real> eval_report_values(const EvalReport& r);

// Scores models against one split, caching what does not depend on the
// candidate (oracle truth ratios and collapse contexts).
class Evaluator {
 public:
  Evaluator(const Transformer& model, const DatasetSplit& split, ParamStore theta_ref, ParamStore theta_oracle,
            std::uint64_t context_seed = 0);

  EvalReport evaluate(const ParamStore& theta) const;
  const std::vector<Real>& oracle_forget_tr() const noexcept { return oracle_tr_; }
  const std::vector<CollapseContext>& retain_contexts() const noexcept { return retain_ctx_; }
  const std::vector<CollapseContext>& forget_contexts() const noexcept { return forget_ctx_; }

 private:
  const Transformer& model_;
  const DatasetSplit& split_;
  ParamStore theta_ref_;
  std::vector<Real> oracle_tr_;
  std::vector<CollapseContext> retain_ctx_;
  std::vector<CollapseContext> forget_ctx_;
};

EvalReport evaluate(const Transformer& model, const ParamStore& theta, const ParamStore& theta_ref,
                    const ParamStore& theta_oracle, const DatasetSplit& split);

}  // namespace unforge
