#pragma once

#include <cstddef>
#include <vector>

#include "chai/model.hpp"
#include "chai/plan.hpp"
#include "chai/tensor.hpp"

namespace chai {

// Cached keys/values of one layer. Key slot i belongs to head
// key_heads[i]; value slot i to value_heads[i]. Each slot holds
// `length` rows of head_dim floats, contiguous.
struct LayerCache {
  std::vector<std::size_t> key_heads;
  std::vector<std::vector<float>> keys;
  std::vector<std::size_t> value_heads;
  std::vector<std::vector<float>> values;
  std::size_t length = 0;
  bool pruned = false;
};

class KVCache {
 public:
  KVCache() = default;
  explicit KVCache(const ModelConfig& config);

  std::size_t num_layers() const { return layers_.size(); }
  std::size_t head_dim() const { return head_dim_; }
  std::size_t length() const { return layers_.empty() ? 0 : layers_.front().length; }

  LayerCache& layer(std::size_t l) { return layers_.at(l); }
  const LayerCache& layer(std::size_t l) const { return layers_.at(l); }

  // Stored vectors (keys + values) across all layers.
  std::size_t stored_key_vectors() const;
  std::size_t stored_value_vectors() const;
  // Bytes the stored vectors would occupy at `element_width` bytes per value.
  std::size_t stored_bytes(std::size_t element_width) const;

 private:
  std::size_t head_dim_ = 0;
  std::vector<LayerCache> layers_;
};

// Attention probability rows recorded per layer and head. rows(l, h)[s-1] is
// the row for traced step s; its length is the number of cached positions it
// attended over.
class AttentionTrace {
 public:
  AttentionTrace() = default;
  AttentionTrace(std::size_t num_layers, std::size_t num_heads);

  std::size_t num_layers() const { return rows_.size(); }
  std::size_t num_heads() const { return rows_.empty() ? 0 : rows_.front().size(); }
  // Number of steps recorded for layer l (equal across heads).
  std::size_t steps(std::size_t layer) const;
  // Minimum step count across layers.
  std::size_t steps() const;

  void append(std::size_t layer, std::size_t head, std::vector<float> row);
  const std::vector<std::vector<float>>& rows(std::size_t layer, std::size_t head) const;

  bool operator==(const AttentionTrace&) const = default;

 private:
  std::vector<std::vector<std::vector<std::vector<float>>>> rows_;
};

// Standard multi-head attention for T query rows at positions
// [cache.length, cache.length + T). Appends post-RoPE keys and values to the
// cache and, if `trace` is set, one probability row per head per query.
Matrix mha_forward(const Matrix& x, const LayerWeights& weights, KVCache& cache, std::size_t layer,
                   AttentionTrace* trace = nullptr);

// Clustered head attention for one token over a pruned cache. Only the
// representative heads compute Q and K; every head h reuses the score row
// of rep(cluster(h)) against its own values, or against the
// representative's values when reuse_values is set.
Matrix clustered_forward(const Matrix& x, const LayerWeights& weights, KVCache& cache, std::size_t layer,
                         const LayerPlan& plan, bool reuse_values = false);

// Drops key slots of non-representative heads (and value slots too when
// prune_values is set). Key slot order becomes the plan's representative
// order. Pruning an already pruned layer is a ContractError.
KVCache prune_cache(KVCache cache, const ClusterPlan& plan, bool prune_values = false);

}  // namespace chai
