#include "chai/engine.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <charconv>
#include <cmath>
#include <random>
#include <sstream>
#include <thread>

#include "chai/errors.hpp"

namespace chai {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point since) {
  return std::chrono::duration<double, std::milli>(Clock::now() - since).count();
}

std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

clustering::KMeansOptions kmeans_options(std::uint64_t seed, std::size_t restarts, std::size_t max_iter, double tol) {
  clustering::KMeansOptions o;
  o.seed = seed;
  o.restarts = restarts;
  o.max_iter = max_iter;
  o.tol = tol;
  return o;
}

std::vector<std::size_t> choose_samples(std::size_t corpus_size, std::size_t count, std::uint64_t seed) {
  std::vector<std::size_t> idx(corpus_size);
  for (std::size_t i = 0; i < corpus_size; ++i) idx[i] = i;
  if (count == corpus_size) return idx;
  std::mt19937_64 gen(clustering::mix_seed(seed, 0x5a3b1e));
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t span = corpus_size - i;
    const std::size_t j = i + static_cast<std::size_t>(gen() % span);
    std::swap(idx[i], idx[j]);
  }
  idx.resize(count);
  std::sort(idx.begin(), idx.end());
  return idx;
}

struct SampleResult {
  std::vector<clustering::Points> features;     // per layer
  std::vector<std::vector<double>> curves;       // per layer
};

CacheSample sample_cache(const KVCache& cache, std::uint64_t width, bool planned) {
  return {cache.length(), cache.stored_key_vectors(), cache.stored_value_vectors(), cache.stored_bytes(width), planned};
}

void check_profile(const Weights& weights, Mode mode, const CalibrationProfile* profile) {
  if (!needs_profile(mode)) return;
  if (!profile) throw ProfileError("mode " + to_string(mode) + " needs a calibration profile");
  validate(*profile, weights.config);
}

}  // namespace

std::string to_string(Mode mode) {
  switch (mode) {
    case Mode::kMha: return "MHA";
    case Mode::kChai: return "CHAI";
    case Mode::kChaiStatic: return "CHAI_STATIC";
    case Mode::kChaiQkv: return "CHAI_QKV";
  }
  return "?";
}

Mode parse_mode(std::string_view text) {
  std::string s(text);
  for (char& c : s) c = c == '-' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  if (s == "MHA") return Mode::kMha;
  if (s == "CHAI") return Mode::kChai;
  if (s == "CHAI_STATIC") return Mode::kChaiStatic;
  if (s == "CHAI_QKV") return Mode::kChaiQkv;
  throw ArgumentError("unknown mode '" + std::string(text) + "' (expected MHA, CHAI, CHAI_STATIC or CHAI_QKV)");
}

std::vector<std::size_t> CalibrationProfile::cluster_counts() const {
  std::vector<std::size_t> out;
  for (const auto& l : layers) out.push_back(l.cluster_count);
  return out;
}

void validate(const CalibrationProfile& profile, const ModelConfig& config) {
  if (profile.fingerprint != fingerprint(config)) {
    throw ProfileError("profile fingerprint " + profile.fingerprint + " does not match model " + fingerprint(config));
  }
  if (profile.layers.size() != config.num_layers) throw ProfileError("profile layer count does not match model");
  try {
    validate(profile.static_assignment, config);
  } catch (const ContractError& e) {
    throw ProfileError(std::string("static assignment invalid: ") + e.what());
  }
  for (std::size_t l = 0; l < config.num_layers; ++l) {
    const auto& lc = profile.layers[l];
    if (lc.cluster_count < 1 || lc.cluster_count > config.num_heads) {
      throw ProfileError("layer " + std::to_string(l) + " cluster count out of range");
    }
    if (profile.static_assignment.layers[l].cluster_count != lc.cluster_count) {
      throw ProfileError("layer " + std::to_string(l) + " static assignment disagrees with its cluster count");
    }
  }
}

nlohmann::json to_json(const CalibrationProfile& p) {
  nlohmann::json layers = nlohmann::json::array();
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    layers.push_back({{"layer", l}, {"cluster_count", p.layers[l].cluster_count}, {"elbow_curve", p.layers[l].elbow_curve}});
  }
  return {{"fingerprint", p.fingerprint},
          {"layers", layers},
          {"static_assignment", to_json(p.static_assignment)},
          {"metadata",
           {{"sample_count", p.metadata.sample_count},
            {"window", p.metadata.window},
            {"threshold", p.metadata.threshold},
            {"seed", p.metadata.seed}}}};
}

CalibrationProfile profile_from_json(const nlohmann::json& j) {
  try {
    CalibrationProfile p;
    p.fingerprint = j.at("fingerprint").get<std::string>();
    for (const auto& lj : j.at("layers")) {
      p.layers.push_back({lj.at("cluster_count").get<std::size_t>(), lj.at("elbow_curve").get<std::vector<double>>()});
    }
    p.static_assignment = plan_from_json(j.at("static_assignment"));
    const auto& m = j.at("metadata");
    p.metadata.sample_count = m.at("sample_count").get<std::size_t>();
    p.metadata.window = m.at("window").get<std::size_t>();
    p.metadata.threshold = m.at("threshold").get<double>();
    p.metadata.seed = m.at("seed").get<std::uint64_t>();
    if (p.static_assignment.layers.size() != p.layers.size()) throw ProfileError("static assignment layer count mismatch");
    for (std::size_t l = 0; l < p.layers.size(); ++l) {
      if (p.static_assignment.layers[l].cluster_count != p.layers[l].cluster_count) {
        throw ProfileError("layer " + std::to_string(l) + " static assignment disagrees with its cluster count");
      }
    }
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw ProfileError(std::string("malformed profile: ") + e.what());
  } catch (const ContractError& e) {
    throw ProfileError(std::string("malformed profile: ") + e.what());
  }
}

std::string elbow_csv(const CalibrationProfile& p) {
  std::ostringstream out;
  out << "layer,k,error\n";
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const auto& curve = p.layers[l].elbow_curve;
    for (std::size_t k = 0; k < curve.size(); ++k) out << l << ',' << (k + 1) << ',' << format_double(curve[k]) << '\n';
  }
  return out.str();
}

CalibrationProfile profile_from_counts(const ModelConfig& config, const std::vector<std::size_t>& counts) {
  CalibrationProfile p;
  p.fingerprint = fingerprint(config);
  p.static_assignment = strided_plan(config, counts);
  for (std::size_t k : counts) p.layers.push_back({k, {}});
  return p;
}

AttentionTrace trace_sequence(const Weights& weights, std::span<const TokenId> tokens, std::size_t traced_tail) {
  const Transformer model(weights);
  KVCache cache(weights.config);
  AttentionTrace trace(weights.config.num_layers, weights.config.num_heads);
  const std::size_t context = tokens.size() - std::min(traced_tail, tokens.size());
  if (context > 0) model.prefill(tokens.first(context), cache);
  if (context < tokens.size()) model.prefill(tokens.subspan(context), cache, &trace);
  return trace;
}

CalibrationProfile calibrate(const Weights& weights, const std::vector<std::vector<TokenId>>& corpus,
                             const CalibrationOptions& options) {
  const ModelConfig& config = weights.config;
  validate(config);
  if (corpus.empty()) throw ArgumentError("calibration corpus is empty");
  const std::size_t count = options.sample_count == 0 ? corpus.size() : options.sample_count;
  if (count > corpus.size()) {
    throw ArgumentError("sample count " + std::to_string(count) + " exceeds corpus size " + std::to_string(corpus.size()));
  }
  if (options.window < 1) throw ArgumentError("calibration window must be at least 1");
  if (options.window > config.max_seq_len) throw ArgumentError("calibration window exceeds max_seq_len");
  const auto chosen = choose_samples(corpus.size(), count, options.seed);
  for (std::size_t idx : chosen) {
    if (corpus[idx].size() < options.window) {
      throw ArgumentError("corpus sample " + std::to_string(idx) + " has " + std::to_string(corpus[idx].size()) +
                          " tokens, window needs " + std::to_string(options.window));
    }
  }

  // Every sample contributes the same number of positions, so feature
  // vectors line up across samples: an untraced context, then `window`
  // traced positions.
  std::size_t span_len = config.max_seq_len;
  for (std::size_t idx : chosen) span_len = std::min(span_len, corpus[idx].size());

  const std::size_t num_layers = config.num_layers;
  std::vector<SampleResult> results(chosen.size());
  auto work = [&](std::size_t i) {
    const auto& sample = corpus[chosen[i]];
    const AttentionTrace trace = trace_sequence(weights, std::span(sample).first(span_len), options.window);
    SampleResult r;
    for (std::size_t l = 0; l < num_layers; ++l) {
      auto f = clustering::extract_features(trace, l, {1, options.window});
      const auto opts = kmeans_options(clustering::mix_seed(options.seed, i * num_layers + l), options.restarts,
                                       options.max_iter, options.tol);
      r.curves.push_back(clustering::elbow_curve(f.heads, opts));
      r.features.push_back(std::move(f.heads));
    }
    results[i] = std::move(r);
  };

  const std::size_t threads = std::clamp<std::size_t>(options.threads, 1, std::max<std::size_t>(chosen.size(), 1));
  if (threads == 1) {
    for (std::size_t i = 0; i < chosen.size(); ++i) work(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < chosen.size(); i = next++) work(i);
      });
    }
  }

  CalibrationProfile profile;
  profile.fingerprint = fingerprint(config);
  profile.metadata = {count, options.window, options.threshold, options.seed};
  const std::size_t heads = config.num_heads;
  for (std::size_t l = 0; l < num_layers; ++l) {
    // Merge in sample order so the result does not depend on thread timing.
    std::vector<double> curve(heads, 0.0);
    clustering::Points mean(heads, clustering::Point(results.front().features[l].front().size(), 0.0));
    for (const auto& r : results) {
      for (std::size_t k = 0; k < heads; ++k) curve[k] += r.curves[l][k];
      for (std::size_t h = 0; h < heads; ++h) {
        for (std::size_t j = 0; j < mean[h].size(); ++j) mean[h][j] += r.features[l][h][j];
      }
    }
    const double n = static_cast<double>(results.size());
    for (double& v : curve) v /= n;
    for (auto& p : mean) {
      for (double& v : p) v /= n;
    }
    const std::size_t k = clustering::elbow_select(curve, options.threshold);
    const auto opts = kmeans_options(clustering::mix_seed(options.seed, 0xfeed0000ULL + l), options.restarts,
                                     options.max_iter, options.tol);
    profile.static_assignment.layers.push_back(clustering::cluster_heads(mean, k, opts));
    profile.layers.push_back({k, std::move(curve)});
  }
  return profile;
}

GenerationResult generate(const Weights& weights, std::span<const TokenId> prompt, std::size_t steps, Mode mode,
                          const CalibrationProfile* profile, const GenerateOptions& options) {
  const ModelConfig& config = weights.config;
  check_profile(weights, mode, profile);
  if (prompt.empty()) throw ArgumentError("prompt must hold at least one token");
  if (steps < 1) throw ArgumentError("steps must be at least 1");
  if (prompt.size() + steps > config.max_seq_len) {
    throw ArgumentError("prompt length " + std::to_string(prompt.size()) + " + steps " + std::to_string(steps) +
                        " exceeds max_seq_len " + std::to_string(config.max_seq_len));
  }
  const bool dynamic = mode == Mode::kChai || mode == Mode::kChaiQkv;
  if (dynamic && options.identify_at < 1) throw ArgumentError("identify_at must be at least 1");
  const bool reuse = reuses_values(mode);

  const Transformer model(weights);
  GenerationResult result;
  result.mode = mode;
  result.prompt_length = prompt.size();
  KVCache cache(config);
  std::optional<ClusterPlan> plan;
  std::optional<AttentionTrace> trace;
  if (dynamic || options.record_trace) trace.emplace(config.num_layers, config.num_heads);

  auto keep = [&](std::vector<float> logits) {
    const TokenId tok = argmax(logits);
    result.tokens.push_back(tok);
    if (options.keep_logits) result.logits.push_back(std::move(logits));
    return tok;
  };

  auto start = Clock::now();
  TokenId tok = keep(model.prefill(prompt, cache));
  if (mode == Mode::kChaiStatic) {
    plan = profile->static_assignment;
    cache = prune_cache(std::move(cache), *plan, false);
  }
  result.timing.time_to_first_token_ms = elapsed_ms(start);
  result.cache_samples.push_back(sample_cache(cache, options.element_width, false));

  const std::size_t decode_steps = steps - 1;
  result.identification_skipped = dynamic && decode_steps < options.identify_at;
  for (std::size_t s = 1; s <= decode_steps; ++s) {
    const bool planned = plan.has_value();
    start = Clock::now();
    std::vector<float> logits;
    if (planned) {
      logits = model.decode(tok, cache, {&*plan, reuse});
    } else {
      const bool tracing = trace && (options.record_trace || s <= options.identify_at);
      logits = model.decode(tok, cache, {}, tracing ? &*trace : nullptr);
    }
    tok = keep(std::move(logits));
    result.timing.step_ms.push_back(elapsed_ms(start));
    result.cache_samples.push_back(sample_cache(cache, options.element_width, planned));

    if (dynamic && !planned && s == options.identify_at) {
      const auto id_start = Clock::now();
      ClusterPlan identified;
      for (std::size_t l = 0; l < config.num_layers; ++l) {
        const auto features = clustering::extract_features(*trace, l, {1, options.identify_at});
        const auto opts = kmeans_options(clustering::mix_seed(options.seed, l), options.restarts, options.max_iter,
                                         options.tol);
        identified.layers.push_back(clustering::cluster_heads(features.heads, profile->layers[l].cluster_count, opts));
      }
      cache = prune_cache(std::move(cache), identified, reuse);
      plan = std::move(identified);
      result.plan_at_identification = plan;
      result.identified_after_step = s;
      result.timing.identification_ms = elapsed_ms(id_start);
    }
  }

  result.final_plan = plan;
  result.trace = std::move(trace);
  for (std::size_t l = 0; l < config.num_layers; ++l) {
    result.stored_key_heads.push_back(cache.layer(l).key_heads.size());
    result.stored_value_heads.push_back(cache.layer(l).value_heads.size());
  }
  const ClusterPlan* in_effect = plan ? &*plan : nullptr;
  result.flops = accounting::attention_flops(config, in_effect, cache.length(), accounting::StepKind::kDecode,
                                             in_effect && reuse);
  result.memory = accounting::kv_cache_bytes(config, in_effect, cache.length(), options.element_width,
                                             in_effect && reuse);
  return result;
}

nlohmann::json to_json(const GenerationResult& r) {
  nlohmann::json samples = nlohmann::json::array();
  for (const auto& c : r.cache_samples) {
    samples.push_back({{"length", c.length},
                       {"key_vectors", c.key_vectors},
                       {"value_vectors", c.value_vectors},
                       {"bytes", c.bytes},
                       {"planned", c.planned}});
  }
  nlohmann::json j = {
      {"mode", to_string(r.mode)},
      {"prompt_length", r.prompt_length},
      {"tokens", r.tokens},
      {"identification_skipped", r.identification_skipped},
      {"identified_after_step", r.identified_after_step ? nlohmann::json(*r.identified_after_step) : nlohmann::json()},
      {"plan", r.final_plan ? to_json(*r.final_plan) : nlohmann::json()},
      {"cache",
       {{"stored_key_heads", r.stored_key_heads}, {"stored_value_heads", r.stored_value_heads}, {"samples", samples}}},
      {"flops", accounting::to_json(r.flops)},
      {"memory", accounting::to_json(r.memory)},
      {"metadata",
       {{"timing",
         {{"time_to_first_token_ms", r.timing.time_to_first_token_ms},
          {"step_ms", r.timing.step_ms},
          {"identification_ms", r.timing.identification_ms}}}}},
  };
  return j;
}

DivergenceReport compare_outputs(const Weights& weights, std::span<const TokenId> prompt, std::size_t steps,
                                 const CalibrationProfile& profile, Mode mode, const GenerateOptions& options) {
  if (mode == Mode::kMha) throw ArgumentError("compare needs a clustered mode to compare against MHA");
  GenerateOptions opts = options;
  opts.keep_logits = true;
  opts.record_trace = false;
  const auto ref = generate(weights, prompt, steps, Mode::kMha, nullptr, opts);
  const auto var = generate(weights, prompt, steps, mode, &profile, opts);

  DivergenceReport report;
  report.mode = mode;
  report.reference_tokens = ref.tokens;
  report.variant_tokens = var.tokens;
  for (std::size_t i = 0; i < ref.logits.size(); ++i) {
    const auto& a = ref.logits[i];
    const auto& b = var.logits[i];
    StepDivergence d;
    d.step = i + 1;
    d.tokens_match = ref.tokens[i] == var.tokens[i];
    double sum_abs = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) {
      const double diff = std::abs(static_cast<double>(a[j]) - static_cast<double>(b[j]));
      d.max_abs_logit_delta = std::max(d.max_abs_logit_delta, diff);
      sum_abs += diff;
    }
    d.mean_abs_logit_delta = sum_abs / static_cast<double>(a.size());
    auto log_softmax = [](const std::vector<float>& x) {
      const double mx = *std::max_element(x.begin(), x.end());
      double z = 0.0;
      for (float v : x) z += std::exp(static_cast<double>(v) - mx);
      const double lz = mx + std::log(z);
      std::vector<double> out(x.size());
      for (std::size_t j = 0; j < x.size(); ++j) out[j] = static_cast<double>(x[j]) - lz;
      return out;
    };
    const auto lp = log_softmax(a);
    const auto lq = log_softmax(b);
    double kl = 0.0;
    for (std::size_t j = 0; j < lp.size(); ++j) kl += std::exp(lp[j]) * (lp[j] - lq[j]);
    d.kl_divergence = std::max(0.0, kl);
    if (!d.tokens_match && !report.first_divergence_step) report.first_divergence_step = d.step;
    report.max_abs_logit_delta = std::max(report.max_abs_logit_delta, d.max_abs_logit_delta);
    report.steps.push_back(d);
  }
  return report;
}

nlohmann::json to_json(const DivergenceReport& r) {
  nlohmann::json steps = nlohmann::json::array();
  for (const auto& s : r.steps) {
    steps.push_back({{"step", s.step},
                     {"tokens_match", s.tokens_match},
                     {"max_abs_logit_delta", s.max_abs_logit_delta},
                     {"mean_abs_logit_delta", s.mean_abs_logit_delta},
                     {"kl_divergence", s.kl_divergence}});
  }
  return {{"mode", to_string(r.mode)},
          {"reference_tokens", r.reference_tokens},
          {"variant_tokens", r.variant_tokens},
          {"first_divergence_step",
           r.first_divergence_step ? nlohmann::json(*r.first_divergence_step) : nlohmann::json()},
          {"max_abs_logit_delta", r.max_abs_logit_delta},
          {"steps", steps}};
}

clustering::StabilityReport membership_stability(const AttentionTrace& trace, const CalibrationProfile& profile,
                                                 std::size_t from_step, std::size_t to_step, std::uint64_t seed) {
  const auto counts = profile.cluster_counts();
  clustering::KMeansOptions opts;
  opts.seed = seed;
  return clustering::membership_stability(trace, counts, from_step, to_step, profile.metadata.window, opts);
}

}  // namespace chai
