#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "chai/model.hpp"
#include "chai/plan.hpp"
#include "chai/transformer.hpp"

namespace chai::testing {

// H=16, L=4, d=256 model whose W_Q/W_K head blocks repeat inside each
// cluster of strided_plan({1, 4, 8, 4}).
inline ModelConfig redundant_config() {
  ModelConfig c;
  c.num_layers = 4;
  c.num_heads = 16;
  c.model_dim = 256;
  c.head_dim = 16;
  c.ffn_dim = 512;
  c.vocab_size = 256;
  c.max_seq_len = 256;
  return c;
}

inline std::vector<std::size_t> planted_counts() { return {1, 4, 8, 4}; }

inline Weights redundant_weights(std::uint64_t seed = 7) {
  const ModelConfig c = redundant_config();
  return make_redundant(init_random(c, seed), strided_plan(c, planted_counts()));
}

inline ModelConfig small_config(std::size_t layers = 2, std::size_t heads = 4, std::size_t head_dim = 4) {
  ModelConfig c;
  c.num_layers = layers;
  c.num_heads = heads;
  c.head_dim = head_dim;
  c.model_dim = heads * head_dim;
  c.ffn_dim = 2 * c.model_dim;
  c.vocab_size = 64;
  c.max_seq_len = 96;
  return c;
}

inline std::vector<TokenId> random_tokens(std::size_t n, std::size_t vocab, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::vector<TokenId> out(n);
  for (auto& t : out) t = static_cast<TokenId>(gen() % vocab);
  return out;
}

}  // namespace chai::testing
