#include <doctest.h>

#include <algorithm>
#include <sstream>

#include "chai/bench.hpp"
#include "chai/errors.hpp"
#include "fixtures.hpp"

using namespace chai;

TEST_CASE("median") {
  CHECK(bench::median({3.0, 1.0, 2.0}) == 2.0);
  CHECK(bench::median({4.0, 1.0, 2.0, 3.0}) == 2.5);
}

TEST_CASE("bench rows and csv") {
  ModelConfig c = chai::testing::small_config(2, 4, 4);
  c.max_seq_len = 64;
  const Weights w = init_random(c, 1);
  const CalibrationProfile p = profile_from_counts(c, {1, 2});
  bench::BenchOptions o;
  o.seq_lens = {8, 16};
  o.repeats = 2;
  o.timed_steps = 3;
  const auto rows = bench::run_bench(w, &p, o);
  REQUIRE(rows.size() == 4);
  for (const auto& r : rows) {
    CHECK(r.median_ms > 0.0);
    if (r.mode == Mode::kChai) {
      const auto& mha = *std::find_if(rows.begin(), rows.end(),
                                      [&](const auto& x) { return x.mode == Mode::kMha && x.seq_len == r.seq_len; });
      CHECK(r.flops.total.total() < mha.flops.total.total());
      CHECK(r.speedup == doctest::Approx(mha.median_ms / r.median_ms));
      CHECK(r.memory.total.kv_total_bytes < mha.memory.total.kv_total_bytes);
    }
  }
  const std::string csv = bench::to_csv(rows);
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  CHECK(line == "mode,seq_len,ttft_ms,median_ms,speedup,ttft_speedup,decode_flops,kv_bytes");
  int n = 0;
  while (std::getline(in, line)) ++n;
  CHECK(n == 4);

  // Reports are deterministic even though timings are not.
  CHECK(bench::to_json(rows).dump() == bench::to_json(bench::run_bench(w, &p, o)).dump());
}

TEST_CASE("bench needs a profile for clustered modes") {
  ModelConfig c = chai::testing::small_config(1, 2, 4);
  const Weights w = init_random(c, 1);
  bench::BenchOptions o;
  o.seq_lens = {4};
  CHECK_THROWS(bench::run_bench(w, nullptr, o));
}
