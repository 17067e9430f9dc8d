#include "unforge/eval.hpp"

#include "unforge/errors.hpp"
#include "unforge/rng.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

namespace unforge {

namespace {

constexpr int kMaxDecode = 12;

std::vector<int> strip_eos(std::span<const int> tokens) {
  std::vector<int> out(tokens.begin(), tokens.end());
  if (!out.empty() && out.back() == kEosToken) out.pop_back();
  return out;
}

Real mean_of(std::span<const Real> xs) {
  if (xs.empty()) return 0.0;
  Real s = 0.0;
  for (Real x : xs) s += x;
  return s / static_cast<Real>(xs.size());
}

// Row-wise log-softmax of one logit row.
Vector log_softmax_row(const Eigen::Ref<const Vector>& x) {
  const Real m = x.maxCoeff();
  const Real lse = m + std::log((x.array() - m).exp().sum());
  return x.array() - lse;
}

}  // namespace

RougeScore rouge_l(std::span<const int> candidate, std::span<const int> reference) {
  if (candidate.empty() || reference.empty()) throw ArgumentError("rouge_l needs non-empty sequences");
  std::vector<int> prev(reference.size() + 1, 0), cur(reference.size() + 1, 0);
  for (std::size_t i = 0; i < candidate.size(); ++i) {
    for (std::size_t j = 0; j < reference.size(); ++j)
      cur[j + 1] = candidate[i] == reference[j] ? prev[j] + 1 : std::max(prev[j + 1], cur[j]);
    std::swap(prev, cur);
  }
  const Real lcs = prev.back();
  const Real p = lcs / static_cast<Real>(candidate.size());
  const Real r = lcs / static_cast<Real>(reference.size());
  RougeScore out;
  out.recall = r;
  out.f = p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
  return out;
}

Real answer_probability(const Transformer& model, const ParamStore& theta, const QAPair& qa,
                        std::span<const int> answer) {
  if (answer.empty()) throw ArgumentError("answer_probability needs a non-empty answer");
  const Real lp = model.sequence_log_prob(theta, qa.with_answer(answer));
  return std::exp(lp / static_cast<Real>(answer.size()));
}

Real truth_ratio_from_probs(Real p_para, std::span<const Real> p_perturbed) {
  if (p_perturbed.empty()) throw ArgumentError("truth ratio needs perturbed answers");
  const Real pert = mean_of(p_perturbed);
  if (p_para + pert <= 0.0) return 0.5;
  return p_para / (p_para + pert);
}

Real truth_ratio(const Transformer& model, const ParamStore& theta, const QAPair& qa) {
  if (qa.paraphrase.empty()) throw ArgumentError("truth ratio needs a paraphrased answer");
  if (qa.perturbed.size() < 2) throw ArgumentError("truth ratio needs at least two perturbed answers");
  const Real p_para = answer_probability(model, theta, qa, qa.paraphrase);
  std::vector<Real> p_pert;
  p_pert.reserve(qa.perturbed.size());
  for (const auto& a : qa.perturbed) p_pert.push_back(answer_probability(model, theta, qa, a));
  return truth_ratio_from_probs(p_para, p_pert);
}

KSResult ks_two_sample(std::span<const Real> a, std::span<const Real> b) {
  if (a.size() < 5 || b.size() < 5) throw ArgumentError("ks_two_sample needs at least 5 values per sample");
  std::vector<Real> x(a.begin(), a.end()), y(b.begin(), b.end());
  std::sort(x.begin(), x.end());
  std::sort(y.begin(), y.end());
  const auto n = static_cast<long>(x.size());
  const auto m = static_cast<long>(y.size());
  // Track the CDF gap in integer units of 1/(n*m) so ties compare exactly.
  long i = 0, j = 0, best = 0;
  while (i < n && j < m) {
    const Real v = std::min(x[i], y[j]);
    while (i < n && x[i] == v) ++i;
    while (j < m && y[j] == v) ++j;
    best = std::max(best, std::labs(i * m - j * n));
  }
  KSResult r;
  r.n = static_cast<int>(n);
  r.m = static_cast<int>(m);
  r.statistic = static_cast<Real>(best) / static_cast<Real>(n * m);
  r.p_value = n * m <= kKsExactLimit ? ks_exact_p(r.statistic, r.n, r.m) : ks_asymptotic_p(r.statistic, r.n, r.m);
  return r;
}

Real ks_asymptotic_p(Real d, int n, int m) {
  if (n <= 0 || m <= 0) throw ArgumentError("ks sample sizes must be positive");
  const Real ne = static_cast<Real>(n) * m / (n + m);
  const Real sq = std::sqrt(ne);
  const Real lambda = (sq + 0.12 + 0.11 / sq) * d;
  const Real a2 = -2.0 * lambda * lambda;
  Real sum = 0.0, sign = 1.0;
  for (int k = 1; k <= 1000; ++k) {
    const Real term = 2.0 * sign * std::exp(a2 * k * k);
    sum += term;
    if (std::abs(term) < 1e-12) return std::clamp(sum, 0.0, 1.0);
    sign = -sign;
  }
  return 1.0;
}

Real ks_exact_p(Real d, int n, int m) {
  if (n <= 0 || m <= 0) throw ArgumentError("ks sample sizes must be positive");
  const long nm = static_cast<long>(n) * m;
  const long c = std::lround(d * static_cast<Real>(nm));
  if (c <= 0) return 1.0;
  // inside[j] counts paths to (i, j) whose every vertex has |i*m - j*n| < c;
  // all[j] counts every path, so the ratio is exact in shape.
  std::vector<Real> inside(static_cast<std::size_t>(m) + 1, 0.0), all(static_cast<std::size_t>(m) + 1, 0.0);
  for (long i = 0; i <= n; ++i) {
    for (long j = 0; j <= m; ++j) {
      const auto ju = static_cast<std::size_t>(j);
      if (i == 0 && j == 0) {
        inside[0] = all[0] = 1.0;
        continue;
      }
      const Real up_in = i > 0 ? inside[ju] : 0.0;
      const Real up_all = i > 0 ? all[ju] : 0.0;
      const Real left_in = j > 0 ? inside[ju - 1] : 0.0;
      const Real left_all = j > 0 ? all[ju - 1] : 0.0;
      all[ju] = up_all + left_all;
      inside[ju] = std::labs(i * m - j * n) < c ? up_in + left_in : 0.0;
    }
  }
  return std::clamp(1.0 - inside.back() / all.back(), 0.0, 1.0);
}

Real forget_quality(std::span<const Real> candidate_tr, std::span<const Real> oracle_tr) {
  return ks_two_sample(candidate_tr, oracle_tr).p_value;
}

Real forget_quality(const Transformer& model, const ParamStore& candidate, const ParamStore& oracle,
                    const std::vector<QAPair>& forget) {
  if (forget.size() < kMinForgetPairs) throw ArgumentError("forget quality needs at least 5 forget pairs");
  std::vector<Real> a, b;
  for (const auto& qa : forget) {
    a.push_back(truth_ratio(model, candidate, qa));
    b.push_back(truth_ratio(model, oracle, qa));
  }
  return forget_quality(a, b);
}

Real harmonic_mean(std::span<const Real> values) {
  if (values.empty()) throw ArgumentError("harmonic mean of nothing");
  Real inv = 0.0;
  for (Real v : values) {
    if (!(v > 0.0)) return 0.0;
    inv += 1.0 / v;
  }
  return static_cast<Real>(values.size()) / inv;
}

SetMetrics evaluate_set(const Transformer& model, const ParamStore& theta, const std::vector<QAPair>& pairs) {
  if (pairs.empty()) throw ArgumentError("cannot evaluate an empty set");
  SetMetrics out;
  std::vector<Real> rf, rr, prob, nll;
  const int ctx = model.config().ctx_len;
  for (const auto& qa : pairs) {
    const TokenSeq prompt = qa.prompt();
    const int room = std::min(kMaxDecode, ctx - static_cast<int>(prompt.size()));
    const TokenSeq decoded = model.greedy_decode(theta, prompt, room);
    const std::vector<int> cand = strip_eos(std::span<const int>(decoded.tokens).subspan(prompt.size()));
    const std::vector<int> ref = strip_eos(qa.answer);
    RougeScore rs;
    if (!cand.empty() && !ref.empty()) rs = rouge_l(cand, ref);
    rf.push_back(rs.f);
    rr.push_back(rs.recall);
    const Real lp = model.sequence_log_prob(theta, qa.sequence());
    const Real len = static_cast<Real>(qa.answer.size());
    prob.push_back(std::exp(lp / len));
    nll.push_back(-lp / len);
    out.truth_ratios.push_back(truth_ratio(model, theta, qa));
  }
  out.rouge_f = mean_of(rf);
  out.rouge_recall = mean_of(rr);
  out.answer_prob = mean_of(prob);
  out.truth_ratio = mean_of(out.truth_ratios);
  out.nll = mean_of(nll);
  return out;
}

Real model_utility(const SetMetrics& retain, const SetMetrics& heldout) {
  const std::array<Real, 6> v{retain.rouge_f,  retain.answer_prob,  retain.truth_ratio,
                              heldout.rouge_f, heldout.answer_prob, heldout.truth_ratio};
  return harmonic_mean(v);
}

Real heldout_utility(const SetMetrics& heldout) {
  const std::array<Real, 3> v{heldout.rouge_f, heldout.answer_prob, heldout.truth_ratio};
  return harmonic_mean(v);
}

Real model_utility(const Transformer& model, const ParamStore& theta, const std::vector<QAPair>& retain,
                   const std::vector<QAPair>& heldout) {
  if (retain.empty() || heldout.empty()) throw ArgumentError("model utility needs retain and heldout pairs");
  return model_utility(evaluate_set(model, theta, retain), evaluate_set(model, theta, heldout));
}

std::vector<CollapseContext> collapse_contexts(const std::vector<QAPair>& pairs, int vocab_size, std::uint64_t seed,
                                               int cap) {
  if (cap <= 0) throw ArgumentError("collapse context cap must be positive");
  std::map<std::vector<int>, std::map<int, int>> counts;
  for (const auto& qa : pairs) {
    const TokenSeq seq = qa.sequence();
    for (Index pos : seq.answer_positions()) {
      if (pos < 2) continue;
      std::vector<int> prefix(seq.tokens.begin(), seq.tokens.begin() + pos);
      const int next = seq.tokens[static_cast<std::size_t>(pos)];
      if (next < 0 || next >= vocab_size) throw ArgumentError("token id outside the vocabulary");
      ++counts[std::move(prefix)][next];
    }
  }
  std::vector<CollapseContext> out;
  out.reserve(counts.size());
  for (const auto& [prefix, next] : counts) {
    CollapseContext c{prefix, Vector::Zero(vocab_size)};
    int total = 0;
    for (const auto& [tok, k] : next) total += k;
    for (const auto& [tok, k] : next) c.q[tok] = static_cast<Real>(k) / total;
    out.push_back(std::move(c));
  }
  if (static_cast<int>(out.size()) > cap) {
    std::vector<std::size_t> order(out.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(seed);
    rng.shuffle(std::span<std::size_t>(order));
    order.resize(static_cast<std::size_t>(cap));
    std::sort(order.begin(), order.end());
    std::vector<CollapseContext> kept;
    kept.reserve(order.size());
    for (std::size_t i : order) kept.push_back(std::move(out[i]));
    out = std::move(kept);
  }
  return out;
}

Real collapse_metric(const Transformer& model, const ParamStore& theta, std::span<const CollapseContext> contexts) {
  if (contexts.empty()) throw ArgumentError("collapse metric needs at least one context");
  model.check_params(theta);
  const int vocab = model.config().vocab_size;
  for (const auto& c : contexts) {
    if (c.prefix.empty() || c.q.size() != vocab) throw ArgumentError("malformed collapse context");
    if ((c.q.array() < 0.0).any() || !c.q.allFinite() || std::abs(c.q.sum() - 1.0) > 1e-9)
      throw ArgumentError("collapse context q is not a distribution");
  }
  // A causal model scores every prefix of a sequence in one pass, so each
  // context is read off the longest context that extends it.
  std::vector<std::size_t> host(contexts.size());
  for (std::size_t i = 0; i < contexts.size(); ++i) {
    host[i] = i;
    const auto& p = contexts[i].prefix;
    for (std::size_t j = 0; j < contexts.size(); ++j) {
      const auto& h = contexts[j].prefix;
      if (h.size() > contexts[host[i]].prefix.size() && std::equal(p.begin(), p.end(), h.begin())) host[i] = j;
    }
  }
  std::map<std::size_t, RowMatrix> logits;
  Real total = 0.0;
  for (std::size_t i = 0; i < contexts.size(); ++i) {
    auto it = logits.find(host[i]);
    if (it == logits.end()) {
      Graph g;
      g.bind(theta);
      it = logits.emplace(host[i], model.logits(g, contexts[host[i]].prefix).value()).first;
    }
    const auto& c = contexts[i];
    const Vector lp = log_softmax_row(it->second.row(static_cast<Index>(c.prefix.size()) - 1).transpose());
    Real kl = 0.0;
    for (Index t = 0; t < vocab; ++t)
      if (c.q[t] > 0.0) kl += c.q[t] * (std::log(c.q[t]) - lp[t]);
    total += std::max(kl, 0.0);
  }
  return total / static_cast<Real>(contexts.size());
}

const std::vector<std::string>& eval_report_columns() {
  static const std::vector<std::string> cols{
      "fq",        "mu",         "f_rl",       "r_rl",       "heldout_rl",      "f_rl_recall",     "r_rl_recall",
      "tr_forget", "tr_retain",  "tr_heldout", "p_forget",   "p_retain",        "p_heldout",       "nll_forget",
      "nll_retain", "heldout_utility", "collapse_retain", "collapse_forget", "divergence_from_ref"};
  return cols;
}

std::vector<Real> eval_report_values(const EvalReport& r) {
  return {r.fq,        r.mu,        r.f_rl,       r.r_rl,       r.heldout_rl, r.f_rl_recall,     r.r_rl_recall,
          r.tr_forget, r.tr_retain, r.tr_heldout, r.p_forget,   r.p_retain,   r.p_heldout,       r.nll_forget,
          r.nll_retain, r.heldout_utility, r.collapse_retain, r.collapse_forget, r.divergence_from_ref};
}

Evaluator::Evaluator(const Transformer& model, const DatasetSplit& split, ParamStore theta_ref,
                     ParamStore theta_oracle, std::uint64_t context_seed)
    : model_(model), split_(split), theta_ref_(std::move(theta_ref)) {
  model_.check_params(theta_ref_);
  model_.check_params(theta_oracle);
  if (split_.forget.size() < kMinForgetPairs) throw ArgumentError("evaluation needs at least 5 forget pairs");
  if (split_.retain.empty() || split_.heldout_world.empty())
    throw ArgumentError("evaluation needs retain and heldout pairs");
  for (const auto& qa : split_.forget) oracle_tr_.push_back(truth_ratio(model_, theta_oracle, qa));
  retain_ctx_ = collapse_contexts(split_.retain, model_.config().vocab_size, derive_seed(context_seed, 1));
  forget_ctx_ = collapse_contexts(split_.forget, model_.config().vocab_size, derive_seed(context_seed, 2));
}

EvalReport Evaluator::evaluate(const ParamStore& theta) const {
  const SetMetrics f = evaluate_set(model_, theta, split_.forget);
  const SetMetrics r = evaluate_set(model_, theta, split_.retain);
  const SetMetrics h = evaluate_set(model_, theta, split_.heldout_world);
  EvalReport rep;
  rep.fq = forget_quality(f.truth_ratios, oracle_tr_);
  rep.mu = model_utility(r, h);
  rep.f_rl = f.rouge_f;
  rep.r_rl = r.rouge_f;
  rep.heldout_rl = h.rouge_f;
  rep.f_rl_recall = f.rouge_recall;
  rep.r_rl_recall = r.rouge_recall;
  rep.tr_forget = f.truth_ratio;
  rep.tr_retain = r.truth_ratio;
  rep.tr_heldout = h.truth_ratio;
  rep.p_forget = f.answer_prob;
  rep.p_retain = r.answer_prob;
  rep.p_heldout = h.answer_prob;
  rep.nll_forget = f.nll;
  rep.nll_retain = r.nll;
  rep.heldout_utility = heldout_utility(h);
  rep.collapse_retain = collapse_metric(model_, theta, retain_ctx_);
  rep.collapse_forget = collapse_metric(model_, theta, forget_ctx_);
  rep.divergence_from_ref = l2_distance(theta, theta_ref_);
  return rep;
}

EvalReport evaluate(const Transformer& model, const ParamStore& theta, const ParamStore& theta_ref,
                    const ParamStore& theta_oracle, const DatasetSplit& split) {
  return Evaluator(model, split, theta_ref, theta_oracle).evaluate(theta);
}

}  // namespace unforge
