#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "chai/engine.hpp"

namespace chai::bench {

struct BenchOptions {
  std::vector<std::size_t> seq_lens = {256, 512, 1024, 2048};
  std::vector<Mode> modes = {Mode::kMha, Mode::kChai};
  std::size_t repeats = 3;
  std::size_t timed_steps = 8;  // steady-state decode steps timed per repeat
  std::size_t identify_at = 5;
  std::uint64_t seed = 0;
  std::uint64_t element_width = accounting::kDefaultElementWidth;
};

struct BenchRow {
  Mode mode = Mode::kMha;
  std::size_t seq_len = 0;
  // Prompt processing plus the first token; for dynamic CHAI also the
  // clustering and pruning that happen after identify_at steps.
  double ttft_ms = 0.0;
  // Median per-step decode time once any plan is in effect.
  double median_ms = 0.0;
  double speedup = 0.0;       // MHA median_ms / median_ms, 0 without an MHA row
  double ttft_speedup = 0.0;  // MHA ttft_ms / ttft_ms
  std::vector<TokenId> tokens;
  accounting::FlopReport flops;      // one decode step at seq_len
  accounting::MemoryReport memory;   // cache at seq_len
};

// Medians over `repeats` runs per (mode, seq_len). The prompt for each length
// is seq_len pseudo-random tokens drawn from `seed`.
std::vector<BenchRow> run_bench(const Weights& weights, const CalibrationProfile* profile, const BenchOptions& options);

// mode,seq_len,ttft_ms,median_ms,speedup,ttft_speedup,decode_flops,kv_bytes
std::string to_csv(const std::vector<BenchRow>& rows);
nlohmann::json to_json(const std::vector<BenchRow>& rows);

double median(std::vector<double> values);

}  // namespace chai::bench
