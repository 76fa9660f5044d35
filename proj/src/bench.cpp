#include "chai/bench.hpp"

#include <algorithm>
#include <random>
#include <sstream>

#include "chai/errors.hpp"

namespace chai::bench {

double median(std::vector<double> values) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

std::vector<BenchRow> run_bench(const Weights& weights, const CalibrationProfile* profile, const BenchOptions& options) {
  const ModelConfig& config = weights.config;
  if (options.repeats < 1 || options.timed_steps < 1) throw ArgumentError("repeats and timed steps must be at least 1");
  const std::size_t decode_steps = options.identify_at + options.timed_steps;
  for (std::size_t len : options.seq_lens) {
    if (len < 1 || len + decode_steps + 1 > config.max_seq_len) {
      throw ArgumentError("seq_len " + std::to_string(len) + " plus " + std::to_string(decode_steps + 1) +
                          " generated tokens does not fit max_seq_len " + std::to_string(config.max_seq_len));
    }
  }

  std::vector<BenchRow> rows;
  for (std::size_t len : options.seq_lens) {
    std::mt19937_64 gen(clustering::mix_seed(options.seed, len));
    std::vector<TokenId> prompt(len);
    for (auto& t : prompt) t = static_cast<TokenId>(gen() % config.vocab_size);

    for (Mode mode : options.modes) {
      GenerateOptions gopts;
      gopts.identify_at = options.identify_at;
      gopts.seed = options.seed;
      gopts.element_width = options.element_width;
      std::vector<double> ttft, ttnt;
      BenchRow row;
      row.mode = mode;
      row.seq_len = len;
      for (std::size_t r = 0; r < options.repeats; ++r) {
        const auto res = generate(weights, prompt, decode_steps + 1, mode, profile, gopts);
        ttft.push_back(res.timing.time_to_first_token_ms + res.timing.identification_ms);
        const auto& steps = res.timing.step_ms;
        ttnt.push_back(median({steps.end() - static_cast<std::ptrdiff_t>(options.timed_steps), steps.end()}));
        row.tokens = res.tokens;
      }
      row.ttft_ms = median(ttft);
      row.median_ms = median(ttnt);
      const ClusterPlan* plan = needs_profile(mode) ? &profile->static_assignment : nullptr;
      const bool reuse = reuses_values(mode);
      row.flops = accounting::attention_flops(config, plan, len, accounting::StepKind::kDecode, reuse);
      row.memory = accounting::kv_cache_bytes(config, plan, len, options.element_width, reuse);
      rows.push_back(std::move(row));
    }
  }

  for (auto& row : rows) {
    const auto mha = std::find_if(rows.begin(), rows.end(), [&](const BenchRow& r) {
      return r.mode == Mode::kMha && r.seq_len == row.seq_len;
    });
    if (mha == rows.end()) continue;
    if (row.median_ms > 0.0) row.speedup = mha->median_ms / row.median_ms;
    if (row.ttft_ms > 0.0) row.ttft_speedup = mha->ttft_ms / row.ttft_ms;
  }
  return rows;
}

std::string to_csv(const std::vector<BenchRow>& rows) {
  std::ostringstream out;
  out.precision(6);
  out << std::fixed;
  out << "mode,seq_len,ttft_ms,median_ms,speedup,ttft_speedup,decode_flops,kv_bytes\n";
  for (const auto& r : rows) {
    out << to_string(r.mode) << ',' << r.seq_len << ',' << r.ttft_ms << ',' << r.median_ms << ',' << r.speedup << ','
        << r.ttft_speedup << ',' << r.flops.total.total() << ',' << r.memory.total.kv_total_bytes << '\n';
  }
  return out.str();
}

nlohmann::json to_json(const std::vector<BenchRow>& rows) {
  nlohmann::json points = nlohmann::json::array();
  for (const auto& r : rows) {
    points.push_back({{"mode", to_string(r.mode)},
                      {"seq_len", r.seq_len},
                      {"tokens", r.tokens},
                      {"flops", accounting::to_json(r.flops)},
                      {"memory", accounting::to_json(r.memory)}});
  }
  return {{"points", points}};
}

}  // namespace chai::bench
