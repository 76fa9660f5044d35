#include "chai/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <charconv>
#include <cstring>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>

#include "chai/bench.hpp"
#include "chai/clustering.hpp"
#include "chai/engine.hpp"
#include "chai/errors.hpp"
#include "chai/io.hpp"

namespace chai::cli {

namespace fs = std::filesystem;

namespace {

// Bad flags or inputs detected before any compute.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void require_file(const std::string& flag, const std::string& path) {
  if (path.empty()) throw UsageError(flag + " is required");
  if (!fs::is_regular_file(path)) throw UsageError(flag + ": file not found: " + path);
}

void require_parent(const std::string& flag, const std::string& path) {
  if (path.empty()) throw UsageError(flag + " is required");
  const fs::path parent = fs::path(path).parent_path();
  if (!parent.empty() && !fs::is_directory(parent)) throw UsageError(flag + ": directory not found: " + parent.string());
}

template <typename T>
std::vector<T> parse_list(const std::string& flag, const std::string& text) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    T v{};
    const auto res = std::from_chars(item.data(), item.data() + item.size(), v);
    if (res.ec != std::errc() || res.ptr != item.data() + item.size()) {
      throw UsageError(flag + ": '" + item + "' is not a valid number");
    }
    out.push_back(v);
  }
  if (out.empty()) throw UsageError(flag + ": empty list");
  return out;
}

Mode parse_mode_flag(const std::string& text) {
  try {
    return parse_mode(text);
  } catch (const ArgumentError& e) {
    throw UsageError(std::string("--mode: ") + e.what());
  }
}

std::size_t env_threads() {
  const char* v = std::getenv("CHAI_THREADS");
  if (!v) return 1;
  std::size_t n = 1;
  const auto res = std::from_chars(v, v + std::strlen(v), n);
  return res.ec == std::errc() && n > 0 ? n : 1;
}

CalibrationProfile load_profile(const std::string& path) {
  return profile_from_json(nlohmann::json::parse(io::read_text(path)));
}

void write_json(const std::string& path, const nlohmann::json& j) { io::write_text(path, j.dump(2) + "\n"); }

std::string sibling(const std::string& path, const std::string& suffix) {
  fs::path p(path);
  p.replace_extension();
  return p.string() + suffix;
}

struct PromptFlags {
  std::string prompt_path;
  std::string text;

  void add(CLI::App* app) {
    app->add_option("--prompt", prompt_path, "Prompt as little-endian int32 token ids");
    app->add_option("--text", text, "Prompt as raw bytes (byte-level token ids)");
  }
  void check() const {
    if (prompt_path.empty() && text.empty()) throw UsageError("one of --prompt or --text is required");
    if (!prompt_path.empty()) require_file("--prompt", prompt_path);
  }
  std::vector<TokenId> load() const { return prompt_path.empty() ? bytes_to_tokens(text) : io::read_tokens(prompt_path); }
};

// init ----------------------------------------------------------------------

struct InitFlags {
  ModelConfig config{4, 16, 256, 16, 512, 256, 256};
  std::uint64_t seed = 0;
  std::string redundant;
  std::string out;
};

int cmd_init(const InitFlags& f, std::ostream& out) {
  require_parent("--out", f.out);
  ModelConfig c = f.config;
  c.model_dim = c.num_heads * c.head_dim;
  try {
    validate(c);
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
  std::vector<std::size_t> counts;
  if (!f.redundant.empty()) {
    counts = parse_list<std::size_t>("--redundant", f.redundant);
    if (counts.size() == 1) counts.assign(c.num_layers, counts.front());
    if (counts.size() != c.num_layers) throw UsageError("--redundant needs 1 or num_layers counts");
    for (std::size_t k : counts) {
      if (k < 1 || k > c.num_heads) throw UsageError("--redundant counts must be in [1, heads]");
    }
  }
  Weights w = init_random(c, f.seed);
  if (!counts.empty()) w = make_redundant(w, strided_plan(c, counts));
  save_weights(w, f.out);
  out << "wrote " << f.out << " (fingerprint " << fingerprint(c) << ")\n";
  return kExitOk;
}

// corpus --------------------------------------------------------------------

struct CorpusFlags {
  std::size_t samples = 64;
  std::size_t length = 48;
  std::size_t vocab = 256;
  std::uint64_t seed = 0;
  std::string out;
};

int cmd_corpus(const CorpusFlags& f, std::ostream& out) {
  require_parent("--out", f.out);
  if (f.vocab < 1 || f.length < 1) throw UsageError("--vocab and --length must be at least 1");
  std::mt19937_64 gen(f.seed);
  std::vector<std::vector<TokenId>> corpus(f.samples, std::vector<TokenId>(f.length));
  for (auto& s : corpus) {
    for (auto& t : s) t = static_cast<TokenId>(gen() % f.vocab);
  }
  io::write_text(f.out, io::format_corpus(corpus));
  out << "wrote " << f.samples << " samples to " << f.out << "\n";
  return kExitOk;
}

// calibrate -----------------------------------------------------------------

struct CalibrateFlags {
  std::string weights, corpus, out, elbow_csv;
  std::size_t samples = 0;
  std::size_t window = 5;
  double threshold = 0.05;
  std::uint64_t seed = 0;
};

int cmd_calibrate(const CalibrateFlags& f, std::ostream& out) {
  require_file("--weights", f.weights);
  require_file("--corpus", f.corpus);
  require_parent("--out", f.out);
  if (f.window < 1) throw UsageError("--window must be at least 1");
  if (f.threshold < 0.0) throw UsageError("--threshold must be nonnegative");

  const Weights w = load_weights(f.weights);
  const auto corpus = io::read_corpus(f.corpus);
  CalibrationOptions opts;
  opts.sample_count = f.samples;
  opts.window = f.window;
  opts.threshold = f.threshold;
  opts.seed = f.seed;
  opts.threads = env_threads();
  const CalibrationProfile profile = calibrate(w, corpus, opts);
  write_json(f.out, to_json(profile));
  const std::string elbow = f.elbow_csv.empty() ? sibling(f.out, ".elbow.csv") : f.elbow_csv;
  io::write_text(elbow, elbow_csv(profile));
  out << "cluster counts:";
  for (std::size_t k : profile.cluster_counts()) out << ' ' << k;
  out << "\nwrote " << f.out << " and " << elbow << "\n";
  return kExitOk;
}

// generate ------------------------------------------------------------------

struct GenerateFlags {
  std::string weights, profile, mode = "MHA", trace, out;
  PromptFlags prompt;
  std::size_t steps = 16;
  std::size_t identify_at = 5;
  std::uint64_t seed = 0;
};

int cmd_generate(const GenerateFlags& f, std::ostream& out) {
  const Mode mode = parse_mode_flag(f.mode);
  require_file("--weights", f.weights);
  if (needs_profile(mode)) {
    if (f.profile.empty()) throw UsageError("--mode " + to_string(mode) + " requires --profile");
    require_file("--profile", f.profile);
  }
  f.prompt.check();
  require_parent("--out", f.out);
  if (!f.trace.empty()) require_parent("--trace", f.trace);
  if (f.steps < 1) throw UsageError("--steps must be at least 1");

  const Weights w = load_weights(f.weights);
  std::optional<CalibrationProfile> profile;
  if (needs_profile(mode)) profile = load_profile(f.profile);
  GenerateOptions opts;
  opts.identify_at = f.identify_at;
  opts.seed = f.seed;
  opts.record_trace = !f.trace.empty();
  const auto result = generate(w, f.prompt.load(), f.steps, mode, profile ? &*profile : nullptr, opts);
  write_json(f.out, to_json(result));
  if (!f.trace.empty() && result.trace) {
    std::ofstream t(f.trace, std::ios::binary);
    io::write_trace_csv(*result.trace, t);
  }
  out << "generated " << result.tokens.size() << " tokens in mode " << to_string(mode) << "\n";
  return kExitOk;
}

// bench ---------------------------------------------------------------------

struct BenchFlags {
  std::string weights, profile, out;
  std::string seq_lens = "256,512,1024,2048";
  std::string modes = "MHA,CHAI";
  std::size_t repeats = 3;
  std::size_t timed_steps = 8;
  std::uint64_t seed = 0;
};

int cmd_bench(const BenchFlags& f, std::ostream& out) {
  require_file("--weights", f.weights);
  bench::BenchOptions opts;
  opts.seq_lens = parse_list<std::size_t>("--seq-lens", f.seq_lens);
  opts.modes.clear();
  std::stringstream ss(f.modes);
  for (std::string m; std::getline(ss, m, ',');) {
    if (!m.empty()) opts.modes.push_back(parse_mode_flag(m));
  }
  if (opts.modes.empty()) throw UsageError("--modes: empty list");
  const bool any_chai = std::any_of(opts.modes.begin(), opts.modes.end(), needs_profile);
  if (any_chai) {
    if (f.profile.empty()) throw UsageError("--modes with a CHAI variant requires --profile");
    require_file("--profile", f.profile);
  }
  require_parent("--out", f.out);
  if (f.repeats < 1 || f.timed_steps < 1) throw UsageError("--repeats and --timed-steps must be at least 1");
  opts.repeats = f.repeats;
  opts.timed_steps = f.timed_steps;
  opts.seed = f.seed;

  const Weights w = load_weights(f.weights);
  std::optional<CalibrationProfile> profile;
  if (any_chai) profile = load_profile(f.profile);
  const auto rows = bench::run_bench(w, profile ? &*profile : nullptr, opts);
  io::write_text(f.out, bench::to_csv(rows));
  write_json(sibling(f.out, ".reports.json"), bench::to_json(rows));
  out << bench::to_csv(rows);
  return kExitOk;
}

// analyze -------------------------------------------------------------------

struct AnalyzeFlags {
  std::string trace, what, out, profile;
  std::size_t window = 5;
  double threshold = 0.05;
  std::uint64_t seed = 0;
};

int cmd_analyze(const AnalyzeFlags& f, std::ostream& out) {
  require_file("--trace", f.trace);
  if (!f.profile.empty()) require_file("--profile", f.profile);
  if (f.out.empty()) throw UsageError("--out is required");
  if (f.window < 1) throw UsageError("--window must be at least 1");

  std::ifstream in(f.trace, std::ios::binary);
  const AttentionTrace trace = io::read_trace_csv(in);
  fs::create_directories(f.out);
  const std::size_t steps = trace.steps();
  if (steps < 1) throw InsufficientTraceError("trace is empty");

  clustering::KMeansOptions kopts;
  kopts.seed = f.seed;
  const std::size_t window = std::min(f.window, steps);
  // Cluster counts from the profile, or from an elbow over the first window.
  auto counts = [&] {
    if (!f.profile.empty()) return load_profile(f.profile).cluster_counts();
    std::vector<std::size_t> ks;
    for (std::size_t l = 0; l < trace.num_layers(); ++l) {
      const auto feats = clustering::extract_features(trace, l, {1, window});
      ks.push_back(clustering::elbow_select(clustering::elbow_curve(feats.heads, kopts), f.threshold));
    }
    return ks;
  };

  if (f.what == "correlation") {
    std::ostringstream csv;
    csv << "layer,head_i,head_j,correlation\n";
    for (std::size_t l = 0; l < trace.num_layers(); ++l) {
      const auto feats = clustering::extract_features(trace, l, {1, steps});
      const auto m = clustering::correlation_matrix(feats.heads);
      for (std::size_t i = 0; i < m.size(); ++i) {
        for (std::size_t j = 0; j < m.size(); ++j) csv << l << ',' << i << ',' << j << ',' << m(i, j) << '\n';
      }
    }
    io::write_text(fs::path(f.out) / "correlation.csv", csv.str());
  } else if (f.what == "elbow") {
    std::ostringstream csv;
    csv << "layer,k,error\n";
    for (std::size_t l = 0; l < trace.num_layers(); ++l) {
      const auto feats = clustering::extract_features(trace, l, {1, window});
      const auto curve = clustering::elbow_curve(feats.heads, kopts);
      for (std::size_t k = 0; k < curve.size(); ++k) csv << l << ',' << (k + 1) << ',' << curve[k] << '\n';
    }
    io::write_text(fs::path(f.out) / "elbow.csv", csv.str());
  } else if (f.what == "stability") {
    const auto ks = counts();
    const auto report = clustering::membership_stability(trace, ks, window, steps, window, kopts);
    std::ostringstream csv;
    csv << "layer,step,changes\n";
    for (std::size_t l = 0; l < report.changes.size(); ++l) {
      for (std::size_t i = 0; i < report.changes[l].size(); ++i) {
        csv << l << ',' << (report.from_step + i) << ',' << report.changes[l][i] << '\n';
      }
    }
    io::write_text(fs::path(f.out) / "stability.csv", csv.str());
  } else if (f.what == "histogram") {
    const auto ks = counts();
    ClusterPlan plan;
    for (std::size_t l = 0; l < trace.num_layers(); ++l) {
      const auto feats = clustering::extract_features(trace, l, {1, window});
      clustering::KMeansOptions o = kopts;
      o.seed = clustering::mix_seed(f.seed, l);
      plan.layers.push_back(clustering::cluster_heads(feats.heads, ks.at(l), o));
    }
    nlohmann::json layers = nlohmann::json::array();
    for (std::size_t l = 0; l < plan.layers.size(); ++l) {
      layers.push_back({{"layer", l}, {"cluster_sizes", clustering::cluster_size_histogram(plan, l)}});
    }
    write_json((fs::path(f.out) / "histogram.json").string(), {{"layers", layers}});
  }
  out << "wrote " << f.what << " analysis to " << f.out << "\n";
  return kExitOk;
}

// compare -------------------------------------------------------------------

struct CompareFlags {
  std::string weights, profile, mode = "CHAI", out;
  PromptFlags prompt;
  std::size_t steps = 16;
  std::size_t identify_at = 5;
  std::uint64_t seed = 0;
};

int cmd_compare(const CompareFlags& f, std::ostream& out) {
  const Mode mode = parse_mode_flag(f.mode);
  if (mode == Mode::kMha) throw UsageError("--mode must be a CHAI variant");
  require_file("--weights", f.weights);
  require_file("--profile", f.profile);
  f.prompt.check();
  require_parent("--out", f.out);

  const Weights w = load_weights(f.weights);
  const CalibrationProfile profile = load_profile(f.profile);
  GenerateOptions opts;
  opts.identify_at = f.identify_at;
  opts.seed = f.seed;
  const auto report = compare_outputs(w, f.prompt.load(), f.steps, profile, mode, opts);
  write_json(f.out, to_json(report));
  out << "first divergence: "
      << (report.first_divergence_step ? std::to_string(*report.first_divergence_step) : std::string("none"))
      << ", max |logit delta| " << report.max_abs_logit_delta << "\n";
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Clustered head attention inference engine", "chai"};
  app.require_subcommand(1);

  InitFlags init;
  auto* c_init = app.add_subcommand("init", "Write a randomly initialized model");
  c_init->add_option("--layers", init.config.num_layers);
  c_init->add_option("--heads", init.config.num_heads);
  c_init->add_option("--head-dim", init.config.head_dim);
  c_init->add_option("--ffn", init.config.ffn_dim);
  c_init->add_option("--vocab", init.config.vocab_size);
  c_init->add_option("--max-seq", init.config.max_seq_len);
  c_init->add_option("--seed", init.seed);
  c_init->add_option("--redundant", init.redundant, "Per-layer planted cluster counts, e.g. 1,4,8,4");
  c_init->add_option("--out", init.out)->required();

  CorpusFlags corpus;
  auto* c_corpus = app.add_subcommand("corpus", "Write a pseudo-random token corpus");
  c_corpus->add_option("--samples", corpus.samples);
  c_corpus->add_option("--length", corpus.length);
  c_corpus->add_option("--vocab", corpus.vocab);
  c_corpus->add_option("--seed", corpus.seed);
  c_corpus->add_option("--out", corpus.out)->required();

  CalibrateFlags cal;
  auto* c_cal = app.add_subcommand("calibrate", "Offline per-layer cluster-count calibration");
  c_cal->add_option("--weights", cal.weights)->required();
  c_cal->add_option("--corpus", cal.corpus)->required();
  c_cal->add_option("--samples", cal.samples, "Samples to use (0 = whole corpus)");
  c_cal->add_option("--window", cal.window);
  c_cal->add_option("--threshold", cal.threshold);
  c_cal->add_option("--seed", cal.seed);
  c_cal->add_option("--out", cal.out)->required();
  c_cal->add_option("--elbow-csv", cal.elbow_csv);

  GenerateFlags gen;
  auto* c_gen = app.add_subcommand("generate", "Greedy generation in one attention mode");
  c_gen->add_option("--weights", gen.weights)->required();
  c_gen->add_option("--mode", gen.mode);
  c_gen->add_option("--profile", gen.profile);
  gen.prompt.add(c_gen);
  c_gen->add_option("--steps", gen.steps);
  c_gen->add_option("--identify-at", gen.identify_at);
  c_gen->add_option("--seed", gen.seed);
  c_gen->add_option("--trace", gen.trace, "Write the attention trace CSV here");
  c_gen->add_option("--out", gen.out)->required();

  BenchFlags bench;
  auto* c_bench = app.add_subcommand("bench", "Time-to-first-token and time-to-next-token sweep");
  c_bench->add_option("--weights", bench.weights)->required();
  c_bench->add_option("--profile", bench.profile);
  c_bench->add_option("--seq-lens", bench.seq_lens);
  c_bench->add_option("--modes", bench.modes);
  c_bench->add_option("--repeats", bench.repeats);
  c_bench->add_option("--timed-steps", bench.timed_steps);
  c_bench->add_option("--seed", bench.seed);
  c_bench->add_option("--out", bench.out)->required();

  AnalyzeFlags an;
  auto* c_an = app.add_subcommand("analyze", "Correlation, elbow, stability or histogram over a trace");
  c_an->add_option("--trace", an.trace)->required();
  c_an->add_option("--what", an.what)->required()->check(CLI::IsMember({"correlation", "elbow", "stability", "histogram"}));
  c_an->add_option("--out", an.out)->required();
  c_an->add_option("--profile", an.profile);
  c_an->add_option("--window", an.window);
  c_an->add_option("--threshold", an.threshold);
  c_an->add_option("--seed", an.seed);

  CompareFlags cmp;
  auto* c_cmp = app.add_subcommand("compare", "Divergence of a CHAI variant from MHA");
  c_cmp->add_option("--weights", cmp.weights)->required();
  c_cmp->add_option("--profile", cmp.profile)->required();
  c_cmp->add_option("--mode", cmp.mode);
  cmp.prompt.add(c_cmp);
  c_cmp->add_option("--steps", cmp.steps);
  c_cmp->add_option("--identify-at", cmp.identify_at);
  c_cmp->add_option("--seed", cmp.seed);
  c_cmp->add_option("--out", cmp.out)->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (c_init->parsed()) return cmd_init(init, out);
    if (c_corpus->parsed()) return cmd_corpus(corpus, out);
    if (c_cal->parsed()) return cmd_calibrate(cal, out);
    if (c_gen->parsed()) return cmd_generate(gen, out);
    if (c_bench->parsed()) return cmd_bench(bench, out);
    if (c_an->parsed()) return cmd_analyze(an, out);
    if (c_cmp->parsed()) return cmd_compare(cmp, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace chai::cli
