#include "unforge/corpus.hpp"

#include "unforge/errors.hpp"
#include "unforge/rng.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

namespace unforge {

namespace {

const std::array<const char*, 7> kFirstNames{"alma", "boris", "cyra", "dario", "elif", "farid", "gaia"};
const std::array<const char*, 8> kLastNames{"kovac",  "lindqvist", "moreau", "nakamura",
                                            "okafor", "petrov",    "quispe", "rossi"};

// [attribute][slot][choice]
const char* const kValueWords[kNumAttributes][kValueSlots][kSlotChoices] = {
    {{"north", "south", "east", "west"}, {"haven", "ridge", "port", "field"}},
    {{"dark", "light", "epic", "quiet"}, {"fantasy", "poetry", "drama", "mystery"}},
    {{"golden", "silver", "bronze", "crystal"}, {"quill", "pen", "star", "crown"}},
    {{"nineteen", "eighteen", "twenty", "seventeen"}, {"ten", "forty", "sixty", "ninety"}},
};

const std::array<const char*, kNumAttributes> kAttributeWords{"city", "genre", "award", "year"};

std::vector<std::string> standard_words() {
  std::vector<std::string> w{"<pad>", "<bos>", "<eos>", "<unk>", "what", "city", "genre", "award", "year",
                             "?",     "it",    "is",    "I",     "don't", "know", "the", "answer"};
  for (auto* n : kFirstNames) w.emplace_back(n);
  for (auto* n : kLastNames) w.emplace_back(n);
  for (auto& attr : kValueWords)
    for (auto& slot : attr)
      for (auto* v : slot) w.emplace_back(v);
  return w;
}

constexpr int kNameCombos = static_cast<int>(kFirstNames.size() * kLastNames.size());

struct Builder {
  const Vocabulary& vocab = Vocabulary::standard();

  std::array<int, 2> name_tokens(int combo) const {
    const int f = combo / static_cast<int>(kLastNames.size());
    const int l = combo % static_cast<int>(kLastNames.size());
    return {vocab.id(kFirstNames[static_cast<std::size_t>(f)]), vocab.id(kLastNames[static_cast<std::size_t>(l)])};
  }

  int value_token(Attribute a, int slot, int choice) const {
    return vocab.id(kValueWords[static_cast<int>(a)][slot][choice]);
  }

  // Form 0: "v1 v2"; form 1: "it is v1 v2".
  std::vector<int> answer_form(int form, std::array<int, kValueSlots> value) const {
    std::vector<int> out;
    if (form == 1) {
      out.push_back(vocab.id("it"));
      out.push_back(vocab.id("is"));
    }
    out.insert(out.end(), value.begin(), value.end());
    out.push_back(kEosToken);
    return out;
  }

  QAPair make_pair(int entity_id, int combo, Attribute attr, Rng& rng) const {
    QAPair qa;
    qa.entity_name = name_tokens(combo);
    qa.question = {kBosToken, vocab.id("what"), qa.entity_name[0], qa.entity_name[1],
                   vocab.id(kAttributeWords[static_cast<std::size_t>(attr)]), vocab.id("?")};
    std::array<int, kValueSlots> choice{};
    for (int s = 0; s < kValueSlots; ++s) choice[static_cast<std::size_t>(s)] = static_cast<int>(rng.below(kSlotChoices));
    qa.fact.entity_id = entity_id;
    qa.fact.attribute = attr;
    for (int s = 0; s < kValueSlots; ++s)
      qa.fact.value[static_cast<std::size_t>(s)] = value_token(attr, s, choice[static_cast<std::size_t>(s)]);
    const int form = static_cast<int>(rng.below(2));
    qa.answer = answer_form(form, qa.fact.value);
    qa.paraphrase = answer_form(1 - form, qa.fact.value);
    // Wrong in both slots, pairwise distinct.
    std::vector<std::array<int, kValueSlots>> wrong;
    for (int a = 0; a < kSlotChoices; ++a)
      for (int b = 0; b < kSlotChoices; ++b)
        if (a != choice[0] && b != choice[1]) wrong.push_back({a, b});
    rng.shuffle(std::span(wrong));
    for (int k = 0; k < kPerturbedAnswers; ++k) {
      const auto& w = wrong[static_cast<std::size_t>(k)];
      qa.perturbed.push_back(answer_form(1 - form, {value_token(attr, 0, w[0]), value_token(attr, 1, w[1])}));
    }
    qa.original_answer = qa.answer;
    return qa;
  }
};

int combo_of(const QAPair& qa) {
  const Vocabulary& v = Vocabulary::standard();
  const std::string& f = v.word(qa.entity_name[0]);
  const std::string& l = v.word(qa.entity_name[1]);
  const auto fi = std::find_if(kFirstNames.begin(), kFirstNames.end(), [&](const char* s) { return f == s; });
  const auto li = std::find_if(kLastNames.begin(), kLastNames.end(), [&](const char* s) { return l == s; });
  if (fi == kFirstNames.end() || li == kLastNames.end()) throw ArgumentError("pair has an unknown entity name");
  return static_cast<int>((fi - kFirstNames.begin()) * static_cast<long>(kLastNames.size()) + (li - kLastNames.begin()));
}

std::vector<int> entity_ids(const std::vector<QAPair>& corpus) {
  std::set<int> ids;
  for (const auto& qa : corpus) ids.insert(qa.fact.entity_id);
  return {ids.begin(), ids.end()};
}

int attributes_in(const std::vector<QAPair>& corpus) {
  std::set<Attribute> attrs;
  for (const auto& qa : corpus) attrs.insert(qa.fact.attribute);
  return static_cast<int>(attrs.size());
}

std::vector<QAPair> make_heldout(const std::vector<QAPair>& corpus, int count, std::uint64_t seed) {
  if (count <= 0) return {};
  std::set<int> used;
  int max_id = -1;
  for (const auto& qa : corpus) {
    used.insert(combo_of(qa));
    max_id = std::max(max_id, qa.fact.entity_id);
  }
  std::vector<int> free;
  for (int c = 0; c < kNameCombos; ++c)
    if (!used.count(c)) free.push_back(c);
  Rng rng(derive_seed(seed, 0x4e1d));
  rng.shuffle(std::span(free));
  const int attrs = std::max(1, attributes_in(corpus));
  const int entities = (count + attrs - 1) / attrs;
  if (entities > static_cast<int>(free.size()))
    throw GenerationError("name pool exhausted: heldout world needs " + std::to_string(entities) +
                          " fresh entities, " + std::to_string(free.size()) + " available");
  Builder b;
  std::vector<QAPair> out;
  for (int e = 0; e < entities && static_cast<int>(out.size()) < count; ++e)
    for (int a = 0; a < attrs && static_cast<int>(out.size()) < count; ++a)
      out.push_back(b.make_pair(max_id + 1 + e, free[static_cast<std::size_t>(e)], static_cast<Attribute>(a), rng));
  return out;
}

int forget_entity_count(double ratio, int n_entities) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw ArgumentError("forget_ratio must lie in (0, 1)");
  const int n = std::max(1, static_cast<int>(std::lround(ratio * n_entities)));
  if (n >= n_entities) throw ArgumentError("forget ratio leaves no retained entities");
  return n;
}

}  // namespace

Vocabulary::Vocabulary(std::vector<std::string> words) : words_(std::move(words)) {}

const Vocabulary& Vocabulary::standard() {
  static const Vocabulary v(standard_words());
  return v;
}

int Vocabulary::id(std::string_view word) const {
  for (std::size_t i = 0; i < words_.size(); ++i)
    if (words_[i] == word) return static_cast<int>(i);
  return kUnkToken;
}

std::vector<int> Vocabulary::tokenize(std::string_view text) const {
  std::vector<int> out;
  std::istringstream in{std::string(text)};
  std::string w;
  while (in >> w) out.push_back(id(w));
  return out;
}

std::string Vocabulary::detokenize(std::span<const int> tokens) const {
  std::string out;
  for (int t : tokens) {
    if (t == kPadToken || t == kBosToken || t == kEosToken) continue;
    if (!out.empty()) out += ' ';
    out += word(t);
  }
  return out;
}

std::string_view attribute_name(Attribute a) {
  switch (a) {
    case Attribute::City: return "birth_city";
    case Attribute::Genre: return "genre";
    case Attribute::Award: return "award";
    case Attribute::Year: return "debut_year";
  }
  return "unknown";
}

Attribute attribute_from_name(std::string_view name) {
  for (int a = 0; a < kNumAttributes; ++a)
    if (attribute_name(static_cast<Attribute>(a)) == name) return static_cast<Attribute>(a);
  throw ArgumentError("unknown attribute '" + std::string(name) + "'");
}

TokenSeq QAPair::prompt() const { return TokenSeq::from_parts(question, std::span<const int>{}); }

TokenSeq QAPair::with_answer(std::span<const int> answer_tokens) const {
  return TokenSeq::from_parts(question, answer_tokens);
}

std::vector<QAPair> generate_corpus(std::uint64_t seed, int n_entities, int attrs_per_entity) {
  if (n_entities < 10) throw ArgumentError("n_entities must be at least 10");
  if (attrs_per_entity < 2) throw ArgumentError("attrs_per_entity must be at least 2");
  if (attrs_per_entity > kNumAttributes)
    throw GenerationError("attribute pool exhausted: at most " + std::to_string(kNumAttributes) + " attributes");
  if (n_entities > kNameCombos)
    throw GenerationError("name pool exhausted: at most " + std::to_string(kNameCombos) + " entities");
  Rng rng(seed);
  std::vector<int> combos(kNameCombos);
  for (int i = 0; i < kNameCombos; ++i) combos[static_cast<std::size_t>(i)] = i;
  rng.shuffle(std::span(combos));
  Builder b;
  std::vector<QAPair> out;
  out.reserve(static_cast<std::size_t>(n_entities * attrs_per_entity));
  for (int e = 0; e < n_entities; ++e)
    for (int a = 0; a < attrs_per_entity; ++a)
      out.push_back(b.make_pair(e, combos[static_cast<std::size_t>(e)], static_cast<Attribute>(a), rng));
  return out;
}

DatasetSplit split_by_ratio(const std::vector<QAPair>& corpus, double forget_ratio, std::uint64_t seed,
                            int heldout_pairs) {
  auto ids = entity_ids(corpus);
  const int n_forget = forget_entity_count(forget_ratio, static_cast<int>(ids.size()));
  Rng rng(derive_seed(seed, 0x5b17));
  rng.shuffle(std::span(ids));
  const std::set<int> forget_ids(ids.begin(), ids.begin() + n_forget);
  DatasetSplit s;
  s.forget_ratio = forget_ratio;
  for (const auto& qa : corpus) (forget_ids.count(qa.fact.entity_id) ? s.forget : s.retain).push_back(qa);
  s.heldout_world = make_heldout(corpus, heldout_pairs, seed);
  return s;
}

DatasetSplit split_overlap(const std::vector<QAPair>& corpus, double forget_ratio, std::uint64_t seed,
                           int heldout_pairs) {
  if (!(forget_ratio > 0.0 && forget_ratio < 1.0)) throw ArgumentError("forget_ratio must lie in (0, 1)");
  const int n_pairs = static_cast<int>(corpus.size());
  const int n_forget = std::max(1, static_cast<int>(std::lround(forget_ratio * n_pairs)));
  std::map<int, std::vector<std::size_t>> by_entity;
  for (std::size_t i = 0; i < corpus.size(); ++i) by_entity[corpus[i].fact.entity_id].push_back(i);
  Rng rng(derive_seed(seed, 0x0e71));
  std::vector<int> ids;
  for (auto& [id, idx] : by_entity) {
    ids.push_back(id);
    rng.shuffle(std::span(idx));
  }
  rng.shuffle(std::span(ids));
  // Round-robin over entities; round r takes each entity's r-th pair while
  // at least one pair of that entity stays retained.
  std::vector<char> chosen(corpus.size(), 0);
  int taken = 0;
  for (std::size_t round = 0; taken < n_forget; ++round) {
    bool progressed = false;
    for (int id : ids) {
      const auto& idx = by_entity[id];
      if (round + 1 >= idx.size() || taken >= n_forget) continue;
      chosen[idx[round]] = 1;
      ++taken;
      progressed = true;
    }
    if (!progressed) throw ArgumentError("forget ratio too large for an overlapping split");
  }
  DatasetSplit s;
  s.forget_ratio = forget_ratio;
  for (std::size_t i = 0; i < corpus.size(); ++i) (chosen[i] ? s.forget : s.retain).push_back(corpus[i]);
  s.heldout_world = make_heldout(corpus, heldout_pairs, seed);
  return s;
}

ContinualSplit split_continual(const std::vector<QAPair>& corpus, std::span<const double> ratios,
                               std::uint64_t seed, int heldout_pairs) {
  if (ratios.empty()) throw ArgumentError("continual split needs at least one stage");
  auto ids = entity_ids(corpus);
  const int n = static_cast<int>(ids.size());
  Rng rng(derive_seed(seed, 0xc0a7));
  rng.shuffle(std::span(ids));
  std::map<int, int> stage_of;
  int next = 0;
  for (std::size_t s = 0; s < ratios.size(); ++s) {
    const int k = forget_entity_count(ratios[s], n);
    if (next + k >= n) throw ArgumentError("continual forget stages leave no retained entities");
    for (int i = 0; i < k; ++i) stage_of[ids[static_cast<std::size_t>(next + i)]] = static_cast<int>(s);
    next += k;
  }
  ContinualSplit out;
  out.stages.resize(ratios.size());
  for (const auto& qa : corpus) {
    auto it = stage_of.find(qa.fact.entity_id);
    if (it == stage_of.end())
      out.retain.push_back(qa);
    else
      out.stages[static_cast<std::size_t>(it->second)].push_back(qa);
  }
  out.heldout_world = make_heldout(corpus, heldout_pairs, seed);
  return out;
}

std::vector<QAPair> make_targeted(const std::vector<QAPair>& pairs, std::string_view target_text, int ctx_len) {
  std::vector<int> target = Vocabulary::standard().tokenize(target_text);
  if (target.empty()) throw ArgumentError("empty target text");
  target.push_back(kEosToken);
  std::vector<QAPair> out;
  out.reserve(pairs.size());
  for (const auto& qa : pairs) {
    if (static_cast<int>(qa.question.size() + target.size()) > ctx_len)
      throw ArgumentError("targeted answer exceeds ctx_len");
    QAPair t = qa;
    t.answer = target;
    out.push_back(std::move(t));
  }
  return out;
}

namespace {

nlohmann::ordered_json pair_json(const QAPair& qa, const char* split) {
  const Vocabulary& v = Vocabulary::standard();
  nlohmann::ordered_json j;
  j["question"] = v.detokenize(qa.question);
  j["answer"] = v.detokenize(qa.answer);
  j["paraphrase"] = v.detokenize(qa.paraphrase);
  auto pert = nlohmann::ordered_json::array();
  for (const auto& p : qa.perturbed) pert.push_back(v.detokenize(p));
  j["perturbed"] = std::move(pert);
  j["entity"] = qa.fact.entity_id;
  j["attribute"] = std::string(attribute_name(qa.fact.attribute));
  j["split"] = split;
  return j;
}

std::vector<int> with_eos(std::vector<int> t) {
  t.push_back(kEosToken);
  return t;
}

}  // namespace

void write_split_jsonl(std::ostream& out, const DatasetSplit& split) {
  for (const auto& qa : split.retain) out << pair_json(qa, "retain").dump() << '\n';
  for (const auto& qa : split.forget) out << pair_json(qa, "forget").dump() << '\n';
  for (const auto& qa : split.heldout_world) out << pair_json(qa, "heldout").dump() << '\n';
}

DatasetSplit read_split_jsonl(std::istream& in) {
  const Vocabulary& v = Vocabulary::standard();
  DatasetSplit s;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      QAPair qa;
      qa.question = v.tokenize(j.at("question").get<std::string>());
      qa.question.insert(qa.question.begin(), kBosToken);
      qa.answer = with_eos(v.tokenize(j.at("answer").get<std::string>()));
      qa.paraphrase = with_eos(v.tokenize(j.at("paraphrase").get<std::string>()));
      for (const auto& p : j.at("perturbed")) qa.perturbed.push_back(with_eos(v.tokenize(p.get<std::string>())));
      qa.original_answer = qa.answer;
      qa.fact.entity_id = j.at("entity").get<int>();
      qa.fact.attribute = attribute_from_name(j.at("attribute").get<std::string>());
      if (qa.question.size() < 4 || qa.paraphrase.size() < kValueSlots + 1)
        throw ArgumentError("record does not follow the corpus templates");
      qa.entity_name = {qa.question[2], qa.question[3]};
      const std::size_t vstart = qa.paraphrase.size() - 1 - kValueSlots;
      for (int k = 0; k < kValueSlots; ++k)
        qa.fact.value[static_cast<std::size_t>(k)] = qa.paraphrase[vstart + static_cast<std::size_t>(k)];
      const std::string split = j.at("split").get<std::string>();
      if (split == "retain")
        s.retain.push_back(std::move(qa));
      else if (split == "forget")
        s.forget.push_back(std::move(qa));
      else if (split == "heldout")
        s.heldout_world.push_back(std::move(qa));
      else
        throw ArgumentError("unknown split '" + split + "'");
    } catch (const nlohmann::json::exception& e) {
      throw ArgumentError("corpus line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  const std::size_t total = s.retain.size() + s.forget.size();
  s.forget_ratio = total ? static_cast<double>(s.forget.size()) / static_cast<double>(total) : 0.0;
  return s;
}

}  // namespace unforge
