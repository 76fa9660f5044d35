#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "chai/accounting.hpp"
#include "chai/attention.hpp"
#include "chai/clustering.hpp"
#include "chai/model.hpp"
#include "chai/transformer.hpp"

namespace chai {

enum class Mode { kMha, kChai, kChaiStatic, kChaiQkv };

std::string to_string(Mode mode);
// Accepts MHA, CHAI, CHAI_STATIC, CHAI_QKV (case-insensitive, '-' or '_').
Mode parse_mode(std::string_view text);
inline bool needs_profile(Mode mode) { return mode != Mode::kMha; }
inline bool reuses_values(Mode mode) { return mode == Mode::kChaiQkv; }

struct LayerCalibration {
  std::size_t cluster_count = 0;
  std::vector<double> elbow_curve;  // err(k), k = 1..H, averaged over samples

  bool operator==(const LayerCalibration&) const = default;
};

struct CalibrationMetadata {
  std::size_t sample_count = 0;
  std::size_t window = 5;
  double threshold = 0.05;
  std::uint64_t seed = 0;

  bool operator==(const CalibrationMetadata&) const = default;
};

// Offline result: per-layer cluster counts plus the context-independent
// assignment used by CHAI_STATIC.
struct CalibrationProfile {
  std::string fingerprint;
  std::vector<LayerCalibration> layers;
  ClusterPlan static_assignment;
  CalibrationMetadata metadata;

  std::vector<std::size_t> cluster_counts() const;
  bool operator==(const CalibrationProfile&) const = default;
};

// Throws ProfileError on a fingerprint mismatch or broken invariants.
void validate(const CalibrationProfile& profile, const ModelConfig& config);

nlohmann::json to_json(const CalibrationProfile& profile);
CalibrationProfile profile_from_json(const nlohmann::json& j);
// layer,k,error
std::string elbow_csv(const CalibrationProfile& profile);

// Builds a profile for `config` directly from per-layer counts; the static
// assignment is strided_plan(counts). Elbow curves are left empty.
CalibrationProfile profile_from_counts(const ModelConfig& config, const std::vector<std::size_t>& counts);

struct CalibrationOptions {
  std::size_t sample_count = 0;  // 0: whole corpus
  std::size_t window = 5;
  double threshold = 0.05;
  std::uint64_t seed = 0;
  std::size_t restarts = 10;
  std::size_t max_iter = 100;
  double tol = 1e-6;
  std::size_t threads = 1;
};

// Dense attention over `tokens` from position 0. Only the last `traced_tail`
// positions are traced; trace step 1 is the first of them.
AttentionTrace trace_sequence(const Weights& weights, std::span<const TokenId> tokens,
                              std::size_t traced_tail = std::numeric_limits<std::size_t>::max());

CalibrationProfile calibrate(const Weights& weights, const std::vector<std::vector<TokenId>>& corpus,
                             const CalibrationOptions& options);

struct GenerateOptions {
  std::size_t identify_at = 5;
  bool record_trace = false;  // MHA mode: trace every decode step
  bool keep_logits = false;
  std::uint64_t seed = 0;
  std::size_t restarts = 10;
  std::size_t max_iter = 100;
  double tol = 1e-6;
  std::uint64_t element_width = accounting::kDefaultElementWidth;
};

// Measured cache state after a forward pass.
struct CacheSample {
  std::size_t length = 0;
  std::size_t key_vectors = 0;
  std::size_t value_vectors = 0;
  std::size_t bytes = 0;  // stored floats x element width
  bool planned = false;   // a cluster plan was in effect
};

struct Timing {
  double time_to_first_token_ms = 0.0;
  std::vector<double> step_ms;  // per decode step, identification excluded
  double identification_ms = 0.0;
};

struct GenerationResult {
  Mode mode = Mode::kMha;
  std::vector<TokenId> tokens;
  std::size_t prompt_length = 0;
  bool identification_skipped = false;
  std::optional<std::size_t> identified_after_step;
  std::optional<ClusterPlan> plan_at_identification;
  std::optional<ClusterPlan> final_plan;
  std::optional<AttentionTrace> trace;
  std::vector<std::vector<float>> logits;  // one per generated token when keep_logits
  std::vector<CacheSample> cache_samples;  // after prefill and after every decode step
  std::vector<std::size_t> stored_key_heads;
  std::vector<std::size_t> stored_value_heads;
  Timing timing;
  accounting::FlopReport flops;
  accounting::MemoryReport memory;
};

// Greedy decoding of `steps` tokens. Dynamic CHAI modes run dense attention
// with tracing for the first identify_at decode steps, cluster the heads of
// every layer once, prune the cache, and then stay clustered.
GenerationResult generate(const Weights& weights, std::span<const TokenId> prompt, std::size_t steps, Mode mode,
                          const CalibrationProfile* profile, const GenerateOptions& options = {});

// Deterministic fields only, plus timings under "metadata".
nlohmann::json to_json(const GenerationResult& result);

struct StepDivergence {
  std::size_t step = 0;  // 1-based index of the generated token
  bool tokens_match = true;
  double max_abs_logit_delta = 0.0;
  double mean_abs_logit_delta = 0.0;
  double kl_divergence = 0.0;  // KL(MHA || variant) of next-token distributions
};

struct DivergenceReport {
  Mode mode = Mode::kChai;
  std::vector<TokenId> reference_tokens;
  std::vector<TokenId> variant_tokens;
  std::optional<std::size_t> first_divergence_step;
  std::vector<StepDivergence> steps;
  double max_abs_logit_delta = 0.0;
};

DivergenceReport compare_outputs(const Weights& weights, std::span<const TokenId> prompt, std::size_t steps,
                                 const CalibrationProfile& profile, Mode mode = Mode::kChai,
                                 const GenerateOptions& options = {});

nlohmann::json to_json(const DivergenceReport& report);

clustering::StabilityReport membership_stability(const AttentionTrace& trace, const CalibrationProfile& profile,
                                                 std::size_t from_step, std::size_t to_step,
                                                 std::uint64_t seed = 0);

}  // namespace chai
