#include <doctest.h>

#include <algorithm>
#include <random>

#include "chai/accounting.hpp"
#include "chai/errors.hpp"
#include "fixtures.hpp"

using namespace chai;
using namespace chai::accounting;

namespace {

ModelConfig llama7b() {
  ModelConfig c;
  c.num_layers = 32;
  c.num_heads = 32;
  c.head_dim = 128;
  c.model_dim = 4096;
  c.ffn_dim = 11008;
  c.vocab_size = 32000;
  c.max_seq_len = 2048;
  return c;
}

ClusterPlan random_plan(const ModelConfig& c, std::mt19937_64& gen) {
  std::vector<std::size_t> counts(c.num_layers);
  for (auto& k : counts) k = 1 + gen() % c.num_heads;
  return strided_plan(c, counts);
}

}  // namespace

TEST_CASE("cache bytes for the 7B shape") {
  const MemoryReport r = kv_cache_bytes(llama7b(), nullptr, 2048, 2);
  CHECK(r.total.kv_total_bytes == 1073741824ULL);
  CHECK(r.baseline_bytes == 1073741824ULL);
  CHECK(r.savings_fraction == 0.0);
  const double reference_bytes = 1.2e9;
  CHECK(std::abs(static_cast<double>(r.total.kv_total_bytes) - reference_bytes) / reference_bytes <= 0.15);
}

TEST_CASE("savings for uniform k=18 of 32") {
  const ModelConfig c = llama7b();
  const ClusterPlan p = strided_plan(c, std::vector<std::size_t>(32, 18));
  const MemoryReport r = kv_cache_bytes(c, &p, 2048);
  CHECK(r.savings_fraction == 0.21875);
  const ClusterPlan full = singleton_plan(c);
  CHECK(kv_cache_bytes(c, &full, 2048).savings_fraction == 0.0);
}

TEST_CASE("savings equal the per-layer closed form") {
  std::mt19937_64 gen(1);
  for (int t = 0; t < 100; ++t) {
    const ModelConfig c = chai::testing::small_config(1 + gen() % 6, 1 + gen() % 12, 2);
    const ClusterPlan p = random_plan(c, gen);
    const MemoryReport r = kv_cache_bytes(c, &p, 1 + gen() % c.max_seq_len);
    double dropped = 0;
    for (const auto& l : p.layers) dropped += static_cast<double>(c.num_heads - l.cluster_count);
    const double expected = dropped / (2.0 * static_cast<double>(c.num_heads * c.num_layers));
    CHECK(r.savings_fraction == doctest::Approx(expected).epsilon(1e-12));
    CHECK(r.savings_fraction >= 0.0);
    CHECK(r.savings_fraction < 0.5);
  }
}

TEST_CASE("value pruning shrinks values too") {
  const ModelConfig c = chai::testing::small_config(2, 8, 4);
  const ClusterPlan p = strided_plan(c, {2, 4});
  const MemoryReport r = kv_cache_bytes(c, &p, 10, 4, true);
  CHECK(r.total.key_bytes == r.total.value_bytes);
  CHECK(r.total.key_bytes == (2 + 4) * 10 * 4 * 4);
}

TEST_CASE("byte errors") {
  const ModelConfig c = chai::testing::small_config();
  CHECK_THROWS_AS(kv_cache_bytes(c, nullptr, c.max_seq_len + 1), ArgumentError);
  CHECK_THROWS_AS(kv_cache_bytes(c, nullptr, 4, 0), ArgumentError);
  ModelConfig zero = c;
  zero.num_heads = 0;
  CHECK_THROWS_AS(kv_cache_bytes(zero, nullptr, 4), ArgumentError);
}

TEST_CASE("decode flops for H=32, d=4096, seq 2048, k=8") {
  ModelConfig c = llama7b();
  c.num_layers = 1;
  const FlopReport mha = attention_flops(c, nullptr, 2048, StepKind::kDecode);
  CHECK(mha.total.total() == 168099840ULL);
  const ClusterPlan p = strided_plan(c, {8});
  const FlopReport chai = attention_flops(c, &p, 2048, StepKind::kDecode);
  CHECK(chai.total.total() == 104939520ULL);
  CHECK(chai.total.score_flops * 4 == mha.total.score_flops);
  CHECK(chai.baseline_flops == mha.total.total());
  CHECK(chai.reduction_fraction == doctest::Approx(0.3757309941520468).epsilon(1e-12));
  const ClusterPlan full = singleton_plan(c);
  CHECK(attention_flops(c, &full, 2048, StepKind::kDecode).reduction_fraction == 0.0);
}

TEST_CASE("prefill sums the decode form over positions") {
  const ModelConfig c = chai::testing::small_config(2, 4, 4);
  const ClusterPlan p = strided_plan(c, {1, 3});
  std::uint64_t sum = 0;
  for (std::uint64_t n = 1; n <= 9; ++n) sum += attention_flops(c, &p, n, StepKind::kDecode).total.total();
  CHECK(attention_flops(c, &p, 9, StepKind::kPrefill).total.total() == sum);
}

TEST_CASE("decode counts are linear in length") {
  std::mt19937_64 gen(2);
  for (int t = 0; t < 50; ++t) {
    ModelConfig c = chai::testing::small_config(1 + gen() % 4, 1 + gen() % 8, 4);
    c.max_seq_len = 512;
    const ClusterPlan p = random_plan(c, gen);
    const std::uint64_t a = 1 + gen() % 40, b = a + 1 + gen() % 40, m = b + (b - a);
    const auto f = [&](std::uint64_t n) { return attention_flops(c, &p, n, StepKind::kDecode).total.total(); };
    const auto mem = [&](std::uint64_t n) { return kv_cache_bytes(c, &p, n).total.kv_total_bytes; };
    CHECK(f(m) - f(b) == f(b) - f(a));
    CHECK(mem(m) - mem(b) == mem(b) - mem(a));
    CHECK(mem(2 * a) == 2 * mem(a));
  }
}

TEST_CASE("clustered flops never exceed dense flops") {
  std::mt19937_64 gen(3);
  for (int t = 0; t < 100; ++t) {
    const ModelConfig c = chai::testing::small_config(1 + gen() % 4, 1 + gen() % 8, 2 * (1 + gen() % 4));
    const ClusterPlan p = random_plan(c, gen);
    const std::uint64_t n = 1 + gen() % c.max_seq_len;
    const auto mha = attention_flops(c, nullptr, n, StepKind::kDecode).total.total();
    const auto chai = attention_flops(c, &p, n, StepKind::kDecode).total.total();
    const auto qkv = attention_flops(c, &p, n, StepKind::kDecode, true).total.total();
    bool all_full = true;
    for (const auto& l : p.layers) all_full = all_full && l.cluster_count == c.num_heads;
    CHECK(chai <= mha);
    CHECK(qkv <= chai);
    CHECK((chai == mha) == all_full);
    const auto r = attention_flops(c, &p, n, StepKind::kDecode).reduction_fraction;
    CHECK(r >= 0.0);
    CHECK(r < 1.0);
  }
}

TEST_CASE("report serialization") {
  const ModelConfig c = chai::testing::small_config(2, 4, 4);
  const ClusterPlan p = strided_plan(c, {1, 3});
  const auto mem = kv_cache_bytes(c, &p, 8);
  const auto flops = attention_flops(c, &p, 8, StepKind::kDecode);
  const auto jm = to_json(mem);
  CHECK(jm["total"]["kv_total_bytes"].get<std::uint64_t>() == mem.total.kv_total_bytes);
  const auto jf = to_json(flops);
  CHECK(jf["baseline_flops"].get<std::uint64_t>() == flops.baseline_flops);
  const std::string csv = to_csv(mem);
  CHECK(csv.rfind("layer,", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') >= 3);
  CHECK(to_csv(flops).rfind("layer,", 0) == 0);
}
