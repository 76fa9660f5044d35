#pragma once

#include <cstddef>
#include <vector>

#include <json.hpp>

namespace chai {

struct ModelConfig;

// Head clustering of a single layer.
struct LayerPlan {
  std::size_t cluster_count = 0;
  std::vector<std::size_t> assignment;      // head -> cluster id
  std::vector<std::size_t> representative;  // cluster id -> head

  bool operator==(const LayerPlan&) const = default;
};

// Per-layer head clustering: which heads share a score row and which head
// computes it.
struct ClusterPlan {
  std::vector<LayerPlan> layers;

  bool operator==(const ClusterPlan&) const = default;
};

// Throws ContractError if the layer plan breaks any of: total assignment over
// `num_heads`, surjective onto [0, k), assignment[rep[c]] == c, 1 <= k <= H.
void validate(const LayerPlan& plan, std::size_t num_heads);
// Also checks the layer count against the config.
void validate(const ClusterPlan& plan, const ModelConfig& config);

// Every head its own cluster in every layer.
ClusterPlan singleton_plan(const ModelConfig& config);

// Head h goes to cluster h % k_l; the representative is the lowest member.
ClusterPlan strided_plan(const ModelConfig& config, const std::vector<std::size_t>& counts);

// Relabels cluster ids in order of first appearance by head index, carrying
// representatives along. Membership and representatives are unchanged.
LayerPlan canonicalize(const LayerPlan& plan);

nlohmann::json to_json(const ClusterPlan& plan);
ClusterPlan plan_from_json(const nlohmann::json& j);

}  // namespace chai
