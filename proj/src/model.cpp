#include "unforge/model.hpp"

#include "unforge/errors.hpp"
#include "unforge/rng.hpp"

#include <cmath>
#include <numeric>
#include <string>

namespace unforge {

TokenSeq TokenSeq::from_parts(std::span<const int> prompt, std::span<const int> answer) {
  TokenSeq s;
  s.tokens.assign(prompt.begin(), prompt.end());
  s.tokens.insert(s.tokens.end(), answer.begin(), answer.end());
  s.roles.assign(prompt.size(), Role::Prompt);
  s.roles.insert(s.roles.end(), answer.size(), Role::Answer);
  return s;
}

std::vector<int> TokenSeq::answer_tokens() const {
  std::vector<int> out;
  for (std::size_t i = 0; i < tokens.size(); ++i)
    if (roles[i] == Role::Answer) out.push_back(tokens[i]);
  return out;
}

std::vector<Index> TokenSeq::answer_positions() const {
  std::vector<Index> out;
  for (std::size_t i = 0; i < tokens.size(); ++i)
    if (roles[i] == Role::Answer) out.push_back(static_cast<Index>(i));
  return out;
}

void TokenSeq::validate(int vocab_size, int ctx_len) const {
  if (tokens.size() != roles.size()) throw ArgumentError("token and role counts differ");
  if (tokens.empty()) throw ArgumentError("empty token sequence");
  if (static_cast<int>(tokens.size()) > ctx_len)
    throw ArgumentError("sequence length " + std::to_string(tokens.size()) + " exceeds ctx_len " +
                        std::to_string(ctx_len));
  for (int t : tokens)
    if (t < 0 || t >= vocab_size) throw ArgumentError("token id " + std::to_string(t) + " outside vocabulary");
  // prompt* answer* pad*
  int phase = 0;
  for (Role r : roles) {
    const int p = r == Role::Prompt ? 0 : (r == Role::Answer ? 1 : 2);
    if (p < phase) throw ArgumentError("roles must be prompt, then answer, then padding");
    phase = p;
  }
}

void ModelConfig::validate() const {
  if (vocab_size < 4) throw ConfigError("vocab_size must be at least 4");
  if (ctx_len < 2) throw ConfigError("ctx_len must be at least 2");
  if (d_model <= 0 || n_layers <= 0 || n_heads <= 0 || d_ff <= 0)
    throw ConfigError("model dimensions must be positive");
  if (d_model % n_heads != 0)
    throw ConfigError("d_model " + std::to_string(d_model) + " is not divisible by n_heads " +
                      std::to_string(n_heads));
}

namespace {

std::string block_name(int layer, const char* leaf) { return "block" + std::to_string(layer) + "." + leaf; }

enum class Init { Normal, ResidualNormal, Ones, Zeros };

struct Slot {
  std::string name;
  Shape shape;
  Init init;
};

std::vector<Slot> parameter_slots(const ModelConfig& c) {
  const Index v = c.vocab_size, ctx = c.ctx_len, d = c.d_model, f = c.d_ff;
  std::vector<Slot> s;
  s.push_back({"tok_emb", {v, d}, Init::Normal});
  s.push_back({"pos_emb", {ctx, d}, Init::Normal});
  for (int l = 0; l < c.n_layers; ++l) {
    s.push_back({block_name(l, "ln1.gain"), {d}, Init::Ones});
    s.push_back({block_name(l, "ln1.bias"), {d}, Init::Zeros});
    s.push_back({block_name(l, "attn.wq"), {d, d}, Init::Normal});
    s.push_back({block_name(l, "attn.wk"), {d, d}, Init::Normal});
    s.push_back({block_name(l, "attn.wv"), {d, d}, Init::Normal});
    s.push_back({block_name(l, "attn.wo"), {d, d}, Init::ResidualNormal});
    s.push_back({block_name(l, "ln2.gain"), {d}, Init::Ones});
    s.push_back({block_name(l, "ln2.bias"), {d}, Init::Zeros});
    s.push_back({block_name(l, "mlp.w1"), {d, f}, Init::Normal});
    s.push_back({block_name(l, "mlp.w2"), {f, d}, Init::ResidualNormal});
  }
  s.push_back({"ln_f.gain", {d}, Init::Ones});
  s.push_back({"ln_f.bias", {d}, Init::Zeros});
  s.push_back({"head.w", {d, v}, Init::Normal});
  s.push_back({"head.b", {v}, Init::Zeros});
  return s;
}

}  // namespace

Transformer::Transformer(ModelConfig config) : config_(config) {
  config_.validate();
  std::vector<std::pair<std::string, Shape>> shapes;
  for (auto& slot : parameter_slots(config_)) shapes.emplace_back(slot.name, slot.shape);
  layout_ = std::make_shared<const ParamLayout>(std::move(shapes));
}

ParamStore Transformer::init_params() const {
  constexpr Real kStd = 0.02;
  const Real resid_std = kStd / std::sqrt(2.0 * config_.n_layers);
  Rng rng(config_.seed);
  Vector values(layout_->total_len());
  Index off = 0;
  for (const auto& slot : parameter_slots(config_)) {
    const Index n = shape_size(slot.shape);
    for (Index i = 0; i < n; ++i) {
      switch (slot.init) {
        case Init::Normal: values[off + i] = kStd * rng.normal(); break;
        case Init::ResidualNormal: values[off + i] = resid_std * rng.normal(); break;
        case Init::Ones: values[off + i] = 1.0; break;
        case Init::Zeros: values[off + i] = 0.0; break;
      }
    }
    off += n;
  }
  return ParamStore(layout_, std::move(values));
}

void Transformer::check_params(const ParamStore& theta) const {
  if (theta.num_entries() == 0) throw StructuralMismatch("empty parameter store");
  if (theta.layout_ptr() == layout_) return;
  if (!(theta.layout() == *layout_))
    throw StructuralMismatch("parameter store does not match the model configuration");
}

Var Transformer::logits(Graph& graph, std::span<const int> tokens) const {
  const Index len = static_cast<Index>(tokens.size());
  if (len == 0) throw ArgumentError("logits of an empty sequence");
  if (len > config_.ctx_len) throw ArgumentError("sequence exceeds ctx_len");
  const Index d = config_.d_model;
  const Index dh = d / config_.n_heads;
  const Real scale = 1.0 / std::sqrt(static_cast<Real>(dh));

  std::vector<Index> ids(tokens.begin(), tokens.end());
  std::vector<Index> pos(static_cast<std::size_t>(len));
  std::iota(pos.begin(), pos.end(), Index{0});
  Var x = embedding(graph.param("tok_emb"), ids) + embedding(graph.param("pos_emb"), pos);

  for (int l = 0; l < config_.n_layers; ++l) {
    Var h = layer_norm(x, graph.param(block_name(l, "ln1.gain")), graph.param(block_name(l, "ln1.bias")));
    Var q = matmul(h, graph.param(block_name(l, "attn.wq")));
    Var k = matmul(h, graph.param(block_name(l, "attn.wk")));
    Var v = matmul(h, graph.param(block_name(l, "attn.wv")));
    std::vector<Var> heads;
    heads.reserve(static_cast<std::size_t>(config_.n_heads));
    for (int hd = 0; hd < config_.n_heads; ++hd) {
      Var qh = slice_cols(q, hd * dh, dh);
      Var kh = slice_cols(k, hd * dh, dh);
      Var vh = slice_cols(v, hd * dh, dh);
      Var att = causal_softmax(scale * matmul_nt(qh, kh));
      heads.push_back(matmul(att, vh));
    }
    Var o = config_.n_heads == 1 ? heads[0] : concat_cols(heads);
    x = x + matmul(o, graph.param(block_name(l, "attn.wo")));
    Var h2 = layer_norm(x, graph.param(block_name(l, "ln2.gain")), graph.param(block_name(l, "ln2.bias")));
    Var ff = matmul(gelu(matmul(h2, graph.param(block_name(l, "mlp.w1")))), graph.param(block_name(l, "mlp.w2")));
    x = x + ff;
  }
  Var xf = layer_norm(x, graph.param("ln_f.gain"), graph.param("ln_f.bias"));
  return add_row(matmul(xf, graph.param("head.w")), graph.param("head.b"));
}

Var Transformer::answer_log_probs(Graph& graph, const TokenSeq& seq) const {
  seq.validate(config_.vocab_size, config_.ctx_len);
  const auto positions = seq.answer_positions();
  if (positions.empty()) throw ArgumentError("sequence has no answer tokens");
  if (positions.front() == 0) throw ArgumentError("answer cannot start at position 0");
  // Padding never precedes answer tokens, so the prefix up to the last
  // answer token is all the model needs.
  const std::span<const int> prefix(seq.tokens.data(), static_cast<std::size_t>(positions.back()));
  Var lp = log_softmax(logits(graph, prefix));
  std::vector<Index> rows(positions.size());
  for (std::size_t i = 0; i < positions.size(); ++i) rows[i] = positions[i] - 1;
  return select_rows(lp, rows);
}

Var Transformer::sequence_log_prob(Graph& graph, const TokenSeq& seq) const {
  Var lp = answer_log_probs(graph, seq);
  const auto answer = seq.answer_tokens();
  std::vector<Index> rows(answer.size());
  std::vector<Index> cols(answer.size());
  for (std::size_t i = 0; i < answer.size(); ++i) {
    rows[i] = static_cast<Index>(i);
    cols[i] = answer[i];
  }
  return sum(pick(lp, rows, cols));
}

Tensor Transformer::forward_logits(const ParamStore& theta, const TokenSeq& seq) const {
  check_params(theta);
  seq.validate(config_.vocab_size, config_.ctx_len);
  Graph g;
  g.bind(theta);
  return Tensor::from_matrix(logits(g, seq.tokens).value());
}

Real Transformer::sequence_log_prob(const ParamStore& theta, const TokenSeq& seq) const {
  check_params(theta);
  Graph g;
  g.bind(theta);
  return sequence_log_prob(g, seq).item();
}

RowMatrix Transformer::answer_distributions(const ParamStore& theta, const TokenSeq& seq) const {
  check_params(theta);
  Graph g;
  g.bind(theta);
  return answer_log_probs(g, seq).value().array().exp().matrix();
}

TokenSeq Transformer::greedy_decode(const ParamStore& theta, const TokenSeq& prompt, int max_new) const {
  check_params(theta);
  prompt.validate(config_.vocab_size, config_.ctx_len);
  if (max_new < 0) throw ArgumentError("max_new must be non-negative");
  if (static_cast<int>(prompt.size()) + max_new > config_.ctx_len)
    throw ArgumentError("prompt length plus max_new exceeds ctx_len");
  TokenSeq out = prompt;
  for (int step = 0; step < max_new; ++step) {
    Graph g;
    g.bind(theta);
    const RowMatrix& lg = logits(g, out.tokens).value();
    const Index last = lg.rows() - 1;
    Index best = 0;
    for (Index j = 1; j < lg.cols(); ++j)
      if (lg(last, j) > lg(last, best)) best = j;
    out.tokens.push_back(static_cast<int>(best));
    out.roles.push_back(Role::Answer);
    if (best == kEosToken) break;
  }
  return out;
}

}  // namespace unforge
