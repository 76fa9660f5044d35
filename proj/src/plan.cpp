#include "chai/plan.hpp"

#include <limits>
#include <string>

#include "chai/errors.hpp"
#include "chai/model.hpp"

namespace chai {

void validate(const LayerPlan& plan, std::size_t num_heads) {
  const std::size_t k = plan.cluster_count;
  if (k < 1 || k > num_heads) {
    throw ContractError("cluster count " + std::to_string(k) + " outside [1, " + std::to_string(num_heads) + "]");
  }
  if (plan.assignment.size() != num_heads) {
    throw ContractError("assignment covers " + std::to_string(plan.assignment.size()) + " heads, expected " +
                        std::to_string(num_heads));
  }
  if (plan.representative.size() != k) {
    throw ContractError("representative list has " + std::to_string(plan.representative.size()) +
                        " entries for " + std::to_string(k) + " clusters");
  }
  std::vector<bool> used(k, false);
  for (std::size_t c : plan.assignment) {
    if (c >= k) throw ContractError("cluster id " + std::to_string(c) + " out of range");
    used[c] = true;
  }
  for (std::size_t c = 0; c < k; ++c) {
    if (!used[c]) throw ContractError("cluster " + std::to_string(c) + " has no member");
    const std::size_t rep = plan.representative[c];
    if (rep >= num_heads || plan.assignment[rep] != c) {
      throw ContractError("representative of cluster " + std::to_string(c) + " is not a member");
    }
  }
}

void validate(const ClusterPlan& plan, const ModelConfig& config) {
  if (plan.layers.size() != config.num_layers) {
    throw ContractError("plan has " + std::to_string(plan.layers.size()) + " layers, model has " +
                        std::to_string(config.num_layers));
  }
  for (const auto& layer : plan.layers) validate(layer, config.num_heads);
}

ClusterPlan singleton_plan(const ModelConfig& config) {
  std::vector<std::size_t> counts(config.num_layers, config.num_heads);
  return strided_plan(config, counts);
}

ClusterPlan strided_plan(const ModelConfig& config, const std::vector<std::size_t>& counts) {
  if (counts.size() != config.num_layers) {
    throw ArgumentError("need one cluster count per layer (" + std::to_string(config.num_layers) + "), got " +
                        std::to_string(counts.size()));
  }
  ClusterPlan plan;
  for (std::size_t k : counts) {
    if (k < 1 || k > config.num_heads) throw ArgumentError("cluster count " + std::to_string(k) + " out of range");
    LayerPlan lp;
    lp.cluster_count = k;
    for (std::size_t h = 0; h < config.num_heads; ++h) lp.assignment.push_back(h % k);
    for (std::size_t c = 0; c < k; ++c) lp.representative.push_back(c);
    plan.layers.push_back(std::move(lp));
  }
  return plan;
}

LayerPlan canonicalize(const LayerPlan& plan) {
  constexpr auto kUnset = std::numeric_limits<std::size_t>::max();
  std::vector<std::size_t> relabel(plan.cluster_count, kUnset);
  std::size_t next = 0;
  LayerPlan out;
  out.cluster_count = plan.cluster_count;
  out.assignment.resize(plan.assignment.size());
  for (std::size_t h = 0; h < plan.assignment.size(); ++h) {
    std::size_t& label = relabel.at(plan.assignment[h]);
    if (label == kUnset) label = next++;
    out.assignment[h] = label;
  }
  out.representative.resize(plan.cluster_count);
  for (std::size_t c = 0; c < plan.cluster_count; ++c) {
    if (relabel[c] == kUnset) throw ContractError("cluster " + std::to_string(c) + " has no member");
    out.representative[relabel[c]] = plan.representative.at(c);
  }
  return out;
}

nlohmann::json to_json(const ClusterPlan& plan) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& lp : plan.layers) {
    layers.push_back({{"cluster_count", lp.cluster_count},
                      {"assignment", lp.assignment},
                      {"representative", lp.representative}});
  }
  return {{"layers", layers}};
}

ClusterPlan plan_from_json(const nlohmann::json& j) {
  ClusterPlan plan;
  for (const auto& lj : j.at("layers")) {
    LayerPlan lp;
    lp.cluster_count = lj.at("cluster_count").get<std::size_t>();
    lp.assignment = lj.at("assignment").get<std::vector<std::size_t>>();
    lp.representative = lj.at("representative").get<std::vector<std::size_t>>();
    validate(lp, lp.assignment.size());
    plan.layers.push_back(std::move(lp));
  }
  return plan;
}

}  // namespace chai
