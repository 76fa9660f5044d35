#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "chai/plan.hpp"
#include "chai/tensor.hpp"

namespace chai {

struct ModelConfig {
  std::size_t num_layers = 1;
  std::size_t num_heads = 1;
  std::size_t model_dim = 2;
  std::size_t head_dim = 2;
  std::size_t ffn_dim = 4;
  std::size_t vocab_size = 256;
  std::size_t max_seq_len = 64;

  bool operator==(const ModelConfig&) const = default;
};

// Throws ConfigError unless model_dim == num_heads * head_dim, every field is
// at least 1 and head_dim is even.
void validate(const ModelConfig& config);

// Hex FNV-1a 64 digest of the canonical config JSON.
std::string fingerprint(const ModelConfig& config);

nlohmann::json to_json(const ModelConfig& config);
ModelConfig config_from_json(const nlohmann::json& j);

struct LayerWeights {
  Matrix wq, wk, wv;  // [d x d], head h owns columns [h*d_h, (h+1)*d_h)
  Matrix wo;          // [d x d]
  std::vector<float> attn_norm;
  std::vector<float> mlp_norm;
  Matrix w_gate, w_up;  // [d x ffn]
  Matrix w_down;        // [ffn x d]

  bool operator==(const LayerWeights&) const = default;
};

struct Weights {
  ModelConfig config;
  Matrix token_embedding;  // [vocab x d]
  std::vector<LayerWeights> layers;
  std::vector<float> final_norm;
  Matrix output;  // [d x vocab]

  bool operator==(const Weights&) const = default;
};

constexpr float kNormEps = 1e-5f;

// Fills every matrix from std::mt19937_64(seed), one draw per entry in
// manifest order (see tensor_manifest). A raw draw u is mapped to
// ((u >> 40) * 2^-24 * 2 - 1) / sqrt(d), i.e. uniform on [-1, 1) scaled by
// 1/sqrt(d). Norm gains are all ones and consume no draws.
Weights init_random(const ModelConfig& config, std::uint64_t seed);

// Overwrites each head's W_Q and W_K blocks with its cluster
// representative's blocks.
Weights make_redundant(const Weights& weights, const ClusterPlan& plan);

struct TensorEntry {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
};

// Serialization order of every tensor; vectors are stored as 1 x n.
std::vector<TensorEntry> tensor_manifest(const ModelConfig& config);

// File layout: "CHAIWGT1", u64 little-endian header length, UTF-8 JSON header
// {"config": ..., "tensors": [{"name", "rows", "cols"}, ...]}, then raw
// little-endian fp32 payload in manifest order.
void save_weights(const Weights& weights, const std::filesystem::path& path);
Weights load_weights(const std::filesystem::path& path);

}  // namespace chai
