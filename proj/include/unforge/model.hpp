#pragma once

#include "unforge/autodiff.hpp"
#include "unforge/param_store.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace unforge {

// Reserved token ids shared by the model and the vocabulary.
inline constexpr int kPadToken = 0;
inline constexpr int kBosToken = 1;
inline constexpr int kEosToken = 2;
inline constexpr int kUnkToken = 3;

enum class Role : std::uint8_t { Prompt, Answer, Pad };

// Token ids with a role per position. Answer tokens form one contiguous run
// that is followed only by padding.
struct TokenSeq {
  std::vector<int> tokens;
  std::vector<Role> roles;

  // [prompt..., answer...] with roles set accordingly.
  static TokenSeq from_parts(std::span<const int> prompt, std::span<const int> answer);

  std::size_t size() const noexcept { return tokens.size(); }
  std::vector<int> answer_tokens() const;
  std::vector<Index> answer_positions() const;
  // Throws ArgumentError if roles are malformed or ids fall outside vocab.
  void validate(int vocab_size, int ctx_len) const;

  bool operator==(const TokenSeq&) const = default;
};

struct ModelConfig {
  int vocab_size = 64;
  int ctx_len = 48;
  int d_model = 64;
  int n_layers = 2;
  int n_heads = 2;
  int d_ff = 128;
  std::uint64_t seed = 0;

  // Throws ConfigError on any violated invariant.
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

// Pre-norm decoder-only transformer with learned absolute positions,
// GELU feed-forward blocks and an untied output head.
class Transformer {
 public:
  explicit Transformer(ModelConfig config);

  const ModelConfig& config() const noexcept { return config_; }

  ParamStore init_params() const;
  // Throws StructuralMismatch unless theta has this model's layout.
  void check_params(const ParamStore& theta) const;

  // [len, vocab] logits on a graph bound to the parameters; row i predicts
  // token i+1.
  Var logits(Graph& graph, std::span<const int> tokens) const;
  // [n_answer, vocab] log-probabilities of the rows that predict each
  // answer token, in answer order.
  Var answer_log_probs(Graph& graph, const TokenSeq& seq) const;
  // Sum of log-probabilities of the answer tokens.
  Var sequence_log_prob(Graph& graph, const TokenSeq& seq) const;

  Tensor forward_logits(const ParamStore& theta, const TokenSeq& seq) const;
  Real sequence_log_prob(const ParamStore& theta, const TokenSeq& seq) const;
  // Softmax rows predicting each answer token ([n_answer, vocab]).
  RowMatrix answer_distributions(const ParamStore& theta, const TokenSeq& seq) const;
  // Appends argmax tokens (lowest id on ties) until eos or max_new tokens.
  TokenSeq greedy_decode(const ParamStore& theta, const TokenSeq& prompt, int max_new) const;

 private:
  ModelConfig config_;
  std::shared_ptr<const ParamLayout> layout_;
};

}  // namespace unforge
