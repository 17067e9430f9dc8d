#pragma once

#include "unforge/model.hpp"

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace unforge {

// Closed word-level vocabulary of the synthetic fact grammar. Ids 0-3 are
// pad, bos, eos and unk.
class Vocabulary {
 public:
  static const Vocabulary& standard();

  int size() const noexcept { return static_cast<int>(words_.size()); }
  // Whitespace split; unknown words map to the unk id.
  std::vector<int> tokenize(std::string_view text) const;
  // Space-joined words; pad, bos and eos are dropped.
  std::string detokenize(std::span<const int> tokens) const;
  int id(std::string_view word) const;
  const std::string& word(int id) const { return words_.at(static_cast<std::size_t>(id)); }

 private:
  explicit Vocabulary(std::vector<std::string> words);
  std::vector<std::string> words_;
};

enum class Attribute : std::uint8_t { City, Genre, Award, Year };
inline constexpr int kNumAttributes = 4;
inline constexpr int kValueSlots = 2;
inline constexpr int kSlotChoices = 4;

std::string_view attribute_name(Attribute a);
Attribute attribute_from_name(std::string_view name);

struct FactRecord {
  int entity_id = 0;
  Attribute attribute = Attribute::City;
  std::array<int, kValueSlots> value{};  // token ids

  bool operator==(const FactRecord&) const = default;
};

// Question/answer record. Every token list is complete: the question starts
// with bos and every answer form ends with eos.
struct QAPair {
  std::vector<int> question;
  std::vector<int> answer;
  std::vector<int> paraphrase;
  std::vector<std::vector<int>> perturbed;
  FactRecord fact;
  std::array<int, 2> entity_name{};
  // Answer before make_targeted replaced it; equal to answer otherwise.
  std::vector<int> original_answer;

  TokenSeq prompt() const;
  TokenSeq sequence() const { return with_answer(answer); }
  TokenSeq with_answer(std::span<const int> answer_tokens) const;

  bool operator==(const QAPair&) const = default;
};

struct DatasetSplit {
  std::vector<QAPair> retain;
  std::vector<QAPair> forget;
  std::vector<QAPair> heldout_world;
  double forget_ratio = 0.0;
};

// Disjoint forget sets unlearned one after another.
struct ContinualSplit {
  std::vector<QAPair> retain;
  std::vector<std::vector<QAPair>> stages;
  std::vector<QAPair> heldout_world;
};

inline constexpr int kPerturbedAnswers = 3;
inline constexpr int kDefaultHeldoutPairs = 20;
inline constexpr std::string_view kRefusalTarget = "I don't know the answer";

// n_entities x attrs_per_entity pairs from fixed templates; deterministic in
// seed. Throws GenerationError when the name or attribute pools run out.
std::vector<QAPair> generate_corpus(std::uint64_t seed, int n_entities, int attrs_per_entity);

// Entity-level split: every pair of a forgotten entity goes to forget.
// Forget entity count is max(1, round(ratio * entities)).
DatasetSplit split_by_ratio(const std::vector<QAPair>& corpus, double forget_ratio, std::uint64_t seed,
                            int heldout_pairs = kDefaultHeldoutPairs);

// Pair-level split; every forgotten entity keeps at least one retained pair.
DatasetSplit split_overlap(const std::vector<QAPair>& corpus, double forget_ratio, std::uint64_t seed,
                           int heldout_pairs = kDefaultHeldoutPairs);

// Entity-disjoint forget stages of the given ratios, sharing one retain set.
ContinualSplit split_continual(const std::vector<QAPair>& corpus, std::span<const double> ratios,
                               std::uint64_t seed, int heldout_pairs = kDefaultHeldoutPairs);

// Replaces each answer with the tokenized target (plus eos).
std::vector<QAPair> make_targeted(const std::vector<QAPair>& pairs, std::string_view target_text,
                                  int ctx_len = ModelConfig{}.ctx_len);

// Line-delimited JSON, one record per pair:
// {"question","answer","paraphrase","perturbed","entity","attribute","split"}.
void write_split_jsonl(std::ostream& out, const DatasetSplit& split);
DatasetSplit read_split_jsonl(std::istream& in);

}  // namespace unforge
