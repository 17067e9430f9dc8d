#pragma once

#include "unforge/corpus.hpp"
#include "unforge/model.hpp"
#include "unforge/param_store.hpp"
#include "unforge/rng.hpp"

#include <vector>

namespace unforge::testing {

// Under 5k parameters; still speaks the full corpus vocabulary.
inline ModelConfig tiny_config(std::uint64_t seed = 0) {
  ModelConfig c;
  c.ctx_len = 16;
  c.d_model = 8;
  c.n_layers = 1;
  c.n_heads = 2;
  c.d_ff = 8;
  c.seed = seed;
  return c;
}

inline ParamStore perturbed(const ParamStore& base, std::uint64_t seed, Real scale) {
  ParamStore out = base;
  Rng rng(seed);
  for (auto& x : out.flat()) x += scale * rng.normal();
  return out;
}

inline std::vector<const QAPair*> pointers(const std::vector<QAPair>& pairs, std::size_t n) {
  std::vector<const QAPair*> out;
  for (std::size_t i = 0; i < n && i < pairs.size(); ++i) out.push_back(&pairs[i]);
  return out;
}

}  // namespace unforge::testing
