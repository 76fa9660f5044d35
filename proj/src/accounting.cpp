#include "chai/accounting.hpp"

#include <sstream>

#include "chai/errors.hpp"

namespace chai::accounting {

namespace {

void check_dims(const ModelConfig& config, const ClusterPlan* plan) {
  if (config.num_layers == 0 || config.num_heads == 0 || config.head_dim == 0 || config.model_dim == 0) {
    throw ArgumentError("model dimensions must be nonzero");
  }
  if (plan) validate(*plan, config);
}

std::uint64_t clusters(const ModelConfig& config, const ClusterPlan* plan, std::size_t layer) {
  return plan ? plan->layers[layer].cluster_count : config.num_heads;
}

// Decode-step cost of one layer at `len` cached positions, with `k` score
// rows out of H and `vk` value heads.
LayerFlops decode_layer(const ModelConfig& c, std::uint64_t k, std::uint64_t vk, std::uint64_t len) {
  const std::uint64_t d = c.model_dim, dh = c.head_dim, h = c.num_heads;
  LayerFlops f;
  f.projection_flops = 2 * d * dh * k       // Q
                       + 2 * d * dh * k     // K
                       + 2 * d * dh * vk    // V
                       + 2 * d * dh * h;    // O
  f.score_flops = 2 * k * len * dh;
  f.softmax_flops = kSoftmaxFlopsPerElement * k * len;
  f.av_flops = 2 * vk * len * dh;
  return f;
}

void accumulate(LayerFlops& dst, const LayerFlops& src) {
  dst.projection_flops += src.projection_flops;
  dst.score_flops += src.score_flops;
  dst.softmax_flops += src.softmax_flops;
  dst.av_flops += src.av_flops;
}

FlopReport flops_for(const ModelConfig& c, const ClusterPlan* plan, std::uint64_t seq_len, StepKind kind,
                     bool values_pruned) {
  FlopReport r;
  r.seq_len = seq_len;
  r.step_kind = kind == StepKind::kDecode ? "decode" : "prefill";
  for (std::size_t l = 0; l < c.num_layers; ++l) {
    const std::uint64_t k = clusters(c, plan, l);
    const std::uint64_t vk = values_pruned ? k : c.num_heads;
    LayerFlops lf;
    if (kind == StepKind::kDecode) {
      lf = decode_layer(c, k, vk, seq_len);
    } else {
      for (std::uint64_t pos = 1; pos <= seq_len; ++pos) accumulate(lf, decode_layer(c, k, vk, pos));
    }
    accumulate(r.total, lf);
    r.layers.push_back(lf);
  }
  return r;
}

}  // namespace

MemoryReport kv_cache_bytes(const ModelConfig& config, const ClusterPlan* plan, std::uint64_t seq_len,
                            std::uint64_t element_width_bytes, bool values_pruned) {
  check_dims(config, plan);
  if (element_width_bytes == 0) throw ArgumentError("element width must be nonzero");
  if (seq_len > config.max_seq_len) {
    throw ArgumentError("seq_len " + std::to_string(seq_len) + " exceeds max_seq_len " +
                        std::to_string(config.max_seq_len));
  }
  MemoryReport r;
  r.seq_len = seq_len;
  r.element_width_bytes = element_width_bytes;
  const std::uint64_t per_head = seq_len * config.head_dim * element_width_bytes;
  for (std::size_t l = 0; l < config.num_layers; ++l) {
    const std::uint64_t k = clusters(config, plan, l);
    LayerMemory m;
    m.key_bytes = k * per_head;
    m.value_bytes = (values_pruned ? k : config.num_heads) * per_head;
    m.kv_total_bytes = m.key_bytes + m.value_bytes;
    r.total.key_bytes += m.key_bytes;
    r.total.value_bytes += m.value_bytes;
    r.total.kv_total_bytes += m.kv_total_bytes;
    r.layers.push_back(m);
  }
  r.baseline_bytes = config.num_layers * 2 * config.num_heads * per_head;
  r.savings_fraction =
      r.baseline_bytes == 0 ? 0.0
                            : 1.0 - static_cast<double>(r.total.kv_total_bytes) / static_cast<double>(r.baseline_bytes);
  return r;
}

FlopReport attention_flops(const ModelConfig& config, const ClusterPlan* plan, std::uint64_t seq_len, StepKind kind,
                           bool values_pruned) {
  check_dims(config, plan);
  FlopReport r = flops_for(config, plan, seq_len, kind, values_pruned);
  r.baseline_flops = plan ? flops_for(config, nullptr, seq_len, kind, false).total.total() : r.total.total();
  r.reduction_fraction =
      r.baseline_flops == 0 ? 0.0
                            : 1.0 - static_cast<double>(r.total.total()) / static_cast<double>(r.baseline_flops);
  return r;
}

nlohmann::json to_json(const MemoryReport& r) {
  auto layer = [](const LayerMemory& m) {
    return nlohmann::json{{"key_bytes", m.key_bytes}, {"value_bytes", m.value_bytes}, {"kv_total_bytes", m.kv_total_bytes}};
  };
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& m : r.layers) layers.push_back(layer(m));
  return {{"layers", layers},
          {"total", layer(r.total)},
          {"baseline_bytes", r.baseline_bytes},
          {"savings_fraction", r.savings_fraction},
          {"element_width_bytes", r.element_width_bytes},
          {"seq_len", r.seq_len}};
}

nlohmann::json to_json(const FlopReport& r) {
  auto layer = [](const LayerFlops& f) {
    return nlohmann::json{{"projection_flops", f.projection_flops}, {"score_flops", f.score_flops},
                          {"softmax_flops", f.softmax_flops},       {"av_flops", f.av_flops},
                          {"total_flops", f.total()}};
  };
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& f : r.layers) layers.push_back(layer(f));
  return {{"layers", layers},
          {"total", layer(r.total)},
          {"baseline_flops", r.baseline_flops},
          {"reduction_fraction", r.reduction_fraction},
          {"seq_len", r.seq_len},
          {"step_kind", r.step_kind}};
}

std::string to_csv(const MemoryReport& r) {
  std::ostringstream out;
  out << "layer,key_bytes,value_bytes,kv_total_bytes,seq_len,element_width_bytes\n";
  for (std::size_t l = 0; l < r.layers.size(); ++l) {
    const auto& m = r.layers[l];
    out << l << ',' << m.key_bytes << ',' << m.value_bytes << ',' << m.kv_total_bytes << ',' << r.seq_len << ','
        << r.element_width_bytes << '\n';
  }
  out << "total," << r.total.key_bytes << ',' << r.total.value_bytes << ',' << r.total.kv_total_bytes << ','
      << r.seq_len << ',' << r.element_width_bytes << '\n';
  return out.str();
}

std::string to_csv(const FlopReport& r) {
  std::ostringstream out;
  out << "layer,projection_flops,score_flops,softmax_flops,av_flops,total_flops,seq_len,step_kind\n";
  auto row = [&](const std::string& name, const LayerFlops& f) {
    out << name << ',' << f.projection_flops << ',' << f.score_flops << ',' << f.softmax_flops << ',' << f.av_flops
        << ',' << f.total() << ',' << r.seq_len << ',' << r.step_kind << '\n';
  };
  for (std::size_t l = 0; l < r.layers.size(); ++l) row(std::to_string(l), r.layers[l]);
  row("total", r.total);
  return out.str();
}

}  // namespace chai::accounting
