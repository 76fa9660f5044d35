#include "chai/attention.hpp"

#include <cmath>
#include <numeric>

#include "chai/errors.hpp"

namespace chai {

namespace {

// One query row against `len` cached rows. Writes the probability row into
// `probs` and, if `out` is non-empty, probs . values into `out`.
void attend_scores(std::span<const float> q, const float* keys, std::size_t len, float scale,
                   std::vector<float>& probs) {
  const std::size_t dh = q.size();
  probs.resize(len);
  for (std::size_t p = 0; p < len; ++p) {
    const float* k = keys + p * dh;
    float dot = 0.0f;
    for (std::size_t j = 0; j < dh; ++j) dot += q[j] * k[j];
    probs[p] = dot * scale;
  }
  softmax_inplace(probs);
}

void weighted_values(std::span<const float> probs, const float* values, std::span<float> out) {
  const std::size_t dh = out.size();
  std::fill(out.begin(), out.end(), 0.0f);
  for (std::size_t p = 0; p < probs.size(); ++p) {
    const float w = probs[p];
    const float* v = values + p * dh;
    for (std::size_t j = 0; j < dh; ++j) out[j] += w * v[j];
  }
}

void append_block(std::vector<float>& slot, std::span<const float> row, std::size_t offset, std::size_t width) {
  slot.insert(slot.end(), row.begin() + static_cast<std::ptrdiff_t>(offset),
              row.begin() + static_cast<std::ptrdiff_t>(offset + width));
}

float score_scale(std::size_t head_dim) { return 1.0f / std::sqrt(static_cast<float>(head_dim)); }

}  // namespace

KVCache::KVCache(const ModelConfig& config) : head_dim_(config.head_dim) {
  layers_.resize(config.num_layers);
  for (auto& lc : layers_) {
    lc.key_heads.resize(config.num_heads);
    std::iota(lc.key_heads.begin(), lc.key_heads.end(), std::size_t{0});
    lc.value_heads = lc.key_heads;
    lc.keys.resize(config.num_heads);
    lc.values.resize(config.num_heads);
  }
}

std::size_t KVCache::stored_key_vectors() const {
  std::size_t n = 0;
  for (const auto& lc : layers_) n += lc.key_heads.size() * lc.length;
  return n;
}

std::size_t KVCache::stored_value_vectors() const {
  std::size_t n = 0;
  for (const auto& lc : layers_) n += lc.value_heads.size() * lc.length;
  return n;
}

std::size_t KVCache::stored_bytes(std::size_t element_width) const {
  // Count what is physically held, not what the bookkeeping claims.
  std::size_t floats = 0;
  for (const auto& lc : layers_) {
    for (const auto& k : lc.keys) floats += k.size();
    for (const auto& v : lc.values) floats += v.size();
  }
  return floats * element_width;
}

AttentionTrace::AttentionTrace(std::size_t num_layers, std::size_t num_heads)
    : rows_(num_layers, std::vector<std::vector<std::vector<float>>>(num_heads)) {}

std::size_t AttentionTrace::steps(std::size_t layer) const {
  const auto& heads = rows_.at(layer);
  return heads.empty() ? 0 : heads.front().size();
}

std::size_t AttentionTrace::steps() const {
  if (rows_.empty()) return 0;
  std::size_t n = steps(0);
  for (std::size_t l = 1; l < rows_.size(); ++l) n = std::min(n, steps(l));
  return n;
}

void AttentionTrace::append(std::size_t layer, std::size_t head, std::vector<float> row) {
  rows_.at(layer).at(head).push_back(std::move(row));
}

const std::vector<std::vector<float>>& AttentionTrace::rows(std::size_t layer, std::size_t head) const {
  return rows_.at(layer).at(head);
}

Matrix mha_forward(const Matrix& x, const LayerWeights& weights, KVCache& cache, std::size_t layer,
                   AttentionTrace* trace) {
  LayerCache& lc = cache.layer(layer);
  if (lc.pruned) throw ModeMismatchError("multi-head attention over a pruned cache (layer " + std::to_string(layer) + ")");
  const std::size_t d = weights.wq.rows();
  const std::size_t dh = cache.head_dim();
  const std::size_t num_heads = lc.key_heads.size();
  if (x.cols() != d) throw ShapeError("attention input " + x.shape_string() + " does not match model dim " + std::to_string(d));
  if (trace && (trace->num_layers() <= layer || trace->num_heads() != num_heads)) {
    throw ShapeError("trace shape does not match the model");
  }

  Matrix q = matmul(x, weights.wq);
  Matrix k = matmul(x, weights.wk);
  const Matrix v = matmul(x, weights.wv);
  const std::size_t start = lc.length;
  const std::size_t tokens = x.rows();
  for (std::size_t t = 0; t < tokens; ++t) {
    for (std::size_t h = 0; h < num_heads; ++h) {
      apply_rope_inplace(q.row(t).subspan(h * dh, dh), start + t);
      apply_rope_inplace(k.row(t).subspan(h * dh, dh), start + t);
      append_block(lc.keys[h], k.row(t), h * dh, dh);
      append_block(lc.values[h], v.row(t), h * dh, dh);
    }
  }
  lc.length += tokens;

  const float scale = score_scale(dh);
  Matrix concat(tokens, d);
  std::vector<float> probs;
  for (std::size_t h = 0; h < num_heads; ++h) {
    for (std::size_t t = 0; t < tokens; ++t) {
      const std::size_t visible = start + t + 1;
      attend_scores(q.row(t).subspan(h * dh, dh), lc.keys[h].data(), visible, scale, probs);
      weighted_values(probs, lc.values[h].data(), concat.row(t).subspan(h * dh, dh));
      if (trace) trace->append(layer, h, probs);
    }
  }
  return matmul(concat, weights.wo);
}

Matrix clustered_forward(const Matrix& x, const LayerWeights& weights, KVCache& cache, std::size_t layer,
                         const LayerPlan& plan, bool reuse_values) {
  LayerCache& lc = cache.layer(layer);
  const std::size_t d = weights.wq.rows();
  const std::size_t dh = cache.head_dim();
  const std::size_t num_heads = plan.assignment.size();
  if (x.rows() != 1 || x.cols() != d) {
    throw ShapeError("clustered attention takes one token of width " + std::to_string(d) + ", got " + x.shape_string());
  }
  if (!lc.pruned || lc.key_heads != plan.representative) {
    throw ContractError("cache key heads of layer " + std::to_string(layer) + " do not match the plan's representatives");
  }
  if (reuse_values ? lc.value_heads != plan.representative : lc.value_heads.size() != num_heads) {
    throw ContractError("cache value heads of layer " + std::to_string(layer) + " do not match the attention mode");
  }

  const auto& reps = plan.representative;
  Matrix q = matmul_column_blocks(x, weights.wq, reps, dh);
  Matrix k = matmul_column_blocks(x, weights.wk, reps, dh);
  const Matrix v = reuse_values ? matmul_column_blocks(x, weights.wv, reps, dh) : matmul(x, weights.wv);
  const std::size_t pos = lc.length;
  for (std::size_t c = 0; c < reps.size(); ++c) {
    apply_rope_inplace(q.row(0).subspan(c * dh, dh), pos);
    apply_rope_inplace(k.row(0).subspan(c * dh, dh), pos);
    append_block(lc.keys[c], k.row(0), c * dh, dh);
  }
  for (std::size_t slot = 0; slot < lc.value_heads.size(); ++slot) {
    append_block(lc.values[slot], v.row(0), slot * dh, dh);
  }
  lc.length += 1;

  const float scale = score_scale(dh);
  Matrix concat(1, d);
  std::vector<float> probs;
  for (std::size_t c = 0; c < reps.size(); ++c) {
    attend_scores(q.row(0).subspan(c * dh, dh), lc.keys[c].data(), lc.length, scale, probs);
    if (reuse_values) {
      const std::size_t rep = reps[c];
      weighted_values(probs, lc.values[c].data(), concat.row(0).subspan(rep * dh, dh));
      for (std::size_t h = 0; h < num_heads; ++h) {
        if (plan.assignment[h] != c || h == rep) continue;
        auto src = concat.row(0).subspan(rep * dh, dh);
        std::copy(src.begin(), src.end(), concat.row(0).begin() + static_cast<std::ptrdiff_t>(h * dh));
      }
    } else {
      for (std::size_t h = 0; h < num_heads; ++h) {
        if (plan.assignment[h] != c) continue;
        weighted_values(probs, lc.values[h].data(), concat.row(0).subspan(h * dh, dh));
      }
    }
  }
  return matmul(concat, weights.wo);
}

KVCache prune_cache(KVCache cache, const ClusterPlan& plan, bool prune_values) {
  if (plan.layers.size() != cache.num_layers()) {
    throw ContractError("plan has " + std::to_string(plan.layers.size()) + " layers, cache has " +
                        std::to_string(cache.num_layers()));
  }
  for (std::size_t l = 0; l < cache.num_layers(); ++l) {
    LayerCache& lc = cache.layer(l);
    const LayerPlan& lp = plan.layers[l];
    if (lc.pruned) throw ContractError("layer " + std::to_string(l) + " of the cache is already pruned");
    validate(lp, lc.key_heads.size());

    std::vector<std::vector<float>> keys;
    for (std::size_t rep : lp.representative) keys.push_back(std::move(lc.keys[rep]));
    lc.keys = std::move(keys);
    lc.key_heads = lp.representative;
    if (prune_values) {
      std::vector<std::vector<float>> values;
      for (std::size_t rep : lp.representative) values.push_back(std::move(lc.values[rep]));
      lc.values = std::move(values);
      lc.value_heads = lp.representative;
    }
    lc.pruned = true;
  }
  return cache;
}

}  // namespace chai
