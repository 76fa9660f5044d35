#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "chai/model.hpp"
#include "chai/plan.hpp"

namespace chai::accounting {

// Cost conventions: a multiply-add is 2 FLOPs; softmax is 5 FLOPs per element.
inline constexpr std::uint64_t kSoftmaxFlopsPerElement = 5;
inline constexpr std::uint64_t kDefaultElementWidth = 2;

struct LayerMemory {
  std::uint64_t key_bytes = 0;
  std::uint64_t value_bytes = 0;
  std::uint64_t kv_total_bytes = 0;
};

struct MemoryReport {
  std::vector<LayerMemory> layers;
  LayerMemory total;
  std::uint64_t baseline_bytes = 0;  // dense MHA at the same length
  double savings_fraction = 0.0;
  std::uint64_t element_width_bytes = kDefaultElementWidth;
  std::uint64_t seq_len = 0;
};

struct LayerFlops {
  std::uint64_t projection_flops = 0;  // Q, K, V and O
  std::uint64_t score_flops = 0;       // Q K^T
  std::uint64_t softmax_flops = 0;
  std::uint64_t av_flops = 0;
  std::uint64_t total() const { return projection_flops + score_flops + softmax_flops + av_flops; }
};

struct FlopReport {
  std::vector<LayerFlops> layers;
  LayerFlops total;
  std::uint64_t baseline_flops = 0;
  double reduction_fraction = 0.0;
  std::uint64_t seq_len = 0;
  std::string step_kind;
};

enum class StepKind { kPrefill, kDecode };

// `plan` null means dense MHA. `values_pruned` models the variant that also
// drops non-representative values.
MemoryReport kv_cache_bytes(const ModelConfig& config, const ClusterPlan* plan, std::uint64_t seq_len,
                            std::uint64_t element_width_bytes = kDefaultElementWidth, bool values_pruned = false);

// Decode: one query against seq_len cached positions. Prefill: the decode
// form summed over positions 1..seq_len.
FlopReport attention_flops(const ModelConfig& config, const ClusterPlan* plan, std::uint64_t seq_len, StepKind kind,
                           bool values_pruned = false);

nlohmann::json to_json(const MemoryReport& report);
nlohmann::json to_json(const FlopReport& report);
std::string to_csv(const MemoryReport& report);
std::string to_csv(const FlopReport& report);

}  // namespace chai::accounting
