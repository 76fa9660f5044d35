#pragma once

#include <cstdint>
#include <string_view>
#include <span>
#include <vector>

#include "chai/attention.hpp"
#include "chai/model.hpp"

namespace chai {

using TokenId = std::int32_t;

// How the attention sub-layer runs on a decode step.
struct AttentionMode {
  const ClusterPlan* plan = nullptr;  // null: dense multi-head attention
  bool reuse_values = false;
};

// Pre-norm decoder stack: RMSNorm -> attention -> residual, RMSNorm -> gated
// SiLU MLP -> residual, then a final RMSNorm and the output projection.
class Transformer {
 public:
  explicit Transformer(const Weights& weights);

  const ModelConfig& config() const { return weights_.config; }
  const Weights& weights() const { return weights_; }

  // Runs `tokens` through dense attention starting at cache.length() and
  // returns the logits of the last position.
  std::vector<float> prefill(std::span<const TokenId> tokens, KVCache& cache, AttentionTrace* trace = nullptr) const;

  // One token at position cache.length().
  std::vector<float> decode(TokenId token, KVCache& cache, AttentionMode mode = {},
                            AttentionTrace* trace = nullptr) const;

 private:
  Matrix embed(std::span<const TokenId> tokens) const;
  void mlp_block(Matrix& x, const LayerWeights& lw) const;
  std::vector<float> logits(std::span<const float> last) const;

  const Weights& weights_;
};

TokenId argmax(std::span<const float> logits);

// Byte-level fallback tokenizer: each byte becomes its own id.
std::vector<TokenId> bytes_to_tokens(std::string_view text);

}  // namespace chai
