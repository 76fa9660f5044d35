#include <doctest.h>

#include <cmath>
#include <random>

#include "chai/attention.hpp"
#include "chai/errors.hpp"
#include "chai/model.hpp"
#include "fixtures.hpp"

using namespace chai;

namespace {

Matrix random_input(std::size_t t, std::size_t d, std::mt19937_64& gen) {
  std::normal_distribution<float> dist(0.0f, 1.0f);
  Matrix m(t, d);
  for (auto& v : m.storage()) v = dist(gen);
  return m;
}

ModelConfig one_layer(std::size_t heads, std::size_t dh) {
  ModelConfig c = chai::testing::small_config(1, heads, dh);
  c.max_seq_len = 64;
  return c;
}

}  // namespace

TEST_CASE("first token attends only to itself") {
  const ModelConfig c = one_layer(4, 4);
  const Weights w = init_random(c, 3);
  KVCache cache(c);
  AttentionTrace trace(1, 4);
  std::mt19937_64 gen(1);
  const Matrix x = random_input(1, c.model_dim, gen);
  const Matrix y = mha_forward(x, w.layers[0], cache, 0, &trace);
  for (std::size_t h = 0; h < 4; ++h) {
    REQUIRE(trace.rows(0, h).size() == 1);
    CHECK(trace.rows(0, h)[0] == std::vector<float>{1.0f});
  }
  const Matrix expected = matmul(matmul(x, w.layers[0].wv), w.layers[0].wo);
  for (std::size_t j = 0; j < c.model_dim; ++j) CHECK(std::abs(y(0, j) - expected(0, j)) < 1e-6);
}

TEST_CASE("hand evaluated two-token single-head attention") {
  ModelConfig c = one_layer(1, 2);
  Weights w = init_random(c, 0);
  LayerWeights& lw = w.layers[0];
  lw.wq = Matrix::from_rows({{1.0f, 0.5f}, {0.0f, 1.0f}});
  lw.wk = Matrix::from_rows({{0.5f, 0.0f}, {1.0f, -1.0f}});
  lw.wv = Matrix::from_rows({{2.0f, 0.0f}, {0.0f, 3.0f}});
  lw.wo = Matrix::from_rows({{1.0f, 1.0f}, {0.0f, 1.0f}});
  const double x[2][2] = {{1.0, 2.0}, {-1.0, 0.5}};

  // Projections, then rotation by angle = position for a 2-dim head.
  double q[2][2], k[2][2], v[2][2];
  for (int t = 0; t < 2; ++t) {
    const double qa = x[t][0] * 1.0 + x[t][1] * 0.0, qb = x[t][0] * 0.5 + x[t][1] * 1.0;
    const double ka = x[t][0] * 0.5 + x[t][1] * 1.0, kb = x[t][0] * 0.0 + x[t][1] * -1.0;
    const double cs = std::cos(static_cast<double>(t)), sn = std::sin(static_cast<double>(t));
    q[t][0] = qa * cs - qb * sn;
    q[t][1] = qa * sn + qb * cs;
    k[t][0] = ka * cs - kb * sn;
    k[t][1] = ka * sn + kb * cs;
    v[t][0] = 2.0 * x[t][0];
    v[t][1] = 3.0 * x[t][1];
  }
  const double scale = 1.0 / std::sqrt(2.0);
  double out[2][2];
  double p1[2];
  // token 0 sees only itself
  out[0][0] = v[0][0];
  out[0][1] = v[0][1];
  const double s0 = (q[1][0] * k[0][0] + q[1][1] * k[0][1]) * scale;
  const double s1 = (q[1][0] * k[1][0] + q[1][1] * k[1][1]) * scale;
  const double m = std::max(s0, s1);
  p1[0] = std::exp(s0 - m) / (std::exp(s0 - m) + std::exp(s1 - m));
  p1[1] = 1.0 - p1[0];
  out[1][0] = p1[0] * v[0][0] + p1[1] * v[1][0];
  out[1][1] = p1[0] * v[0][1] + p1[1] * v[1][1];
  double y[2][2];
  for (int t = 0; t < 2; ++t) {
    y[t][0] = out[t][0] * 1.0 + out[t][1] * 0.0;
    y[t][1] = out[t][0] * 1.0 + out[t][1] * 1.0;
  }

  KVCache cache(c);
  AttentionTrace trace(1, 1);
  const Matrix xm = Matrix::from_rows({{1.0f, 2.0f}, {-1.0f, 0.5f}});
  const Matrix got = mha_forward(xm, lw, cache, 0, &trace);
  for (int t = 0; t < 2; ++t)
    for (int j = 0; j < 2; ++j) CHECK(std::abs(got(t, j) - y[t][j]) < 1e-6);
  REQUIRE(trace.rows(0, 0).size() == 2);
  CHECK(std::abs(trace.rows(0, 0)[1][0] - p1[0]) < 1e-6);
  CHECK(std::abs(trace.rows(0, 0)[1][1] - p1[1]) < 1e-6);
}

TEST_CASE("token-by-token decoding matches a batched prefill") {
  const ModelConfig c = one_layer(4, 4);
  const Weights w = init_random(c, 5);
  std::mt19937_64 gen(2);
  const Matrix x = random_input(6, c.model_dim, gen);
  KVCache batched(c), stepped(c);
  const Matrix all = mha_forward(x, w.layers[0], batched, 0);
  for (std::size_t t = 0; t < 6; ++t) {
    const Matrix one = mha_forward(Matrix(1, c.model_dim, std::vector<float>(x.row(t).begin(), x.row(t).end())),
                                   w.layers[0], stepped, 0);
    for (std::size_t j = 0; j < c.model_dim; ++j) CHECK(std::abs(one(0, j) - all(t, j)) < 1e-5);
  }
}

TEST_CASE("heads with identical query and key blocks have equal trace rows") {
  const ModelConfig c = one_layer(4, 4);
  const ClusterPlan plan = strided_plan(c, {2});
  const Weights w = make_redundant(init_random(c, 8), plan);
  std::mt19937_64 gen(4);
  KVCache cache(c);
  AttentionTrace trace(1, 4);
  mha_forward(random_input(7, c.model_dim, gen), w.layers[0], cache, 0, &trace);
  for (std::size_t h = 0; h < 4; ++h) {
    const std::size_t rep = h % 2;
    for (std::size_t s = 0; s < 7; ++s)
      for (std::size_t p = 0; p < trace.rows(0, h)[s].size(); ++p)
        CHECK(std::abs(trace.rows(0, h)[s][p] - trace.rows(0, rep)[s][p]) < 1e-6);
  }
}

TEST_CASE("trace rows are distributions over the cached positions") {
  const ModelConfig c = one_layer(3, 4);
  const Weights w = init_random(c, 6);
  std::mt19937_64 gen(6);
  KVCache cache(c);
  AttentionTrace trace(1, 3);
  mha_forward(random_input(5, c.model_dim, gen), w.layers[0], cache, 0, &trace);
  for (std::size_t h = 0; h < 3; ++h)
    for (std::size_t s = 0; s < 5; ++s) {
      const auto& row = trace.rows(0, h)[s];
      CHECK(row.size() == s + 1);
      double sum = 0;
      for (float p : row) {
        CHECK(p >= 0.0f);
        CHECK(p <= 1.0f);
        sum += p;
      }
      CHECK(std::abs(sum - 1.0) < 1e-5);
    }
}

TEST_CASE("causality: changing a later token leaves earlier outputs untouched") {
  const ModelConfig c = one_layer(2, 4);
  const Weights w = init_random(c, 12);
  std::mt19937_64 gen(12);
  for (int trial = 0; trial < 10; ++trial) {
    Matrix x = random_input(6, c.model_dim, gen);
    const std::size_t p = gen() % 6;
    KVCache a(c), b(c);
    AttentionTrace ta(1, 2), tb(1, 2);
    const Matrix ya = mha_forward(x, w.layers[0], a, 0, &ta);
    for (std::size_t j = 0; j < c.model_dim; ++j) x(p, j) += 1.5f;
    const Matrix yb = mha_forward(x, w.layers[0], b, 0, &tb);
    for (std::size_t t = 0; t < p; ++t) {
      for (std::size_t j = 0; j < c.model_dim; ++j) CHECK(ya(t, j) == yb(t, j));
      for (std::size_t h = 0; h < 2; ++h) CHECK(ta.rows(0, h)[t] == tb.rows(0, h)[t]);
    }
  }
}

TEST_CASE("singleton plan: clustered attention equals dense attention bitwise") {
  const ModelConfig c = one_layer(4, 4);
  const Weights w = init_random(c, 13);
  const ClusterPlan plan = singleton_plan(c);
  std::mt19937_64 gen(13);
  const Matrix prompt = random_input(4, c.model_dim, gen);
  KVCache dense(c), clustered(c), reused(c);
  mha_forward(prompt, w.layers[0], dense, 0);
  mha_forward(prompt, w.layers[0], clustered, 0);
  mha_forward(prompt, w.layers[0], reused, 0);
  clustered = prune_cache(std::move(clustered), plan);
  reused = prune_cache(std::move(reused), plan, true);
  for (int step = 0; step < 5; ++step) {
    const Matrix x = random_input(1, c.model_dim, gen);
    const Matrix a = mha_forward(x, w.layers[0], dense, 0);
    const Matrix b = clustered_forward(x, w.layers[0], clustered, 0, plan.layers[0]);
    const Matrix r = clustered_forward(x, w.layers[0], reused, 0, plan.layers[0], true);
    CHECK(a == b);
    CHECK(b == r);
  }
}

TEST_CASE("redundant weights: clustered attention tracks dense attention") {
  std::mt19937_64 gen(14);
  for (int trial = 0; trial < 5; ++trial) {
    const ModelConfig c = one_layer(8, 4);
    const std::size_t k = 1 + gen() % 8;
    const ClusterPlan plan = strided_plan(c, {k});
    const Weights w = make_redundant(init_random(c, gen()), plan);
    const Matrix prompt = random_input(5, c.model_dim, gen);
    KVCache dense(c), clustered(c);
    mha_forward(prompt, w.layers[0], dense, 0);
    mha_forward(prompt, w.layers[0], clustered, 0);
    clustered = prune_cache(std::move(clustered), plan);
    for (int step = 0; step < 8; ++step) {
      const Matrix x = random_input(1, c.model_dim, gen);
      const Matrix a = mha_forward(x, w.layers[0], dense, 0);
      const Matrix b = clustered_forward(x, w.layers[0], clustered, 0, plan.layers[0]);
      REQUIRE(b.cols() == c.model_dim);
      for (std::size_t j = 0; j < c.model_dim; ++j) CHECK(std::abs(a(0, j) - b(0, j)) < 1e-5);
      CHECK(clustered.layer(0).key_heads.size() == k);
      CHECK(clustered.layer(0).value_heads.size() == 8);
    }
  }
}

TEST_CASE("value reuse replicates the representative's output") {
  const ModelConfig c = one_layer(4, 4);
  const ClusterPlan plan = strided_plan(c, {2});
  const Weights w = init_random(c, 15);
  std::mt19937_64 gen(15);
  KVCache cache(c);
  mha_forward(random_input(3, c.model_dim, gen), w.layers[0], cache, 0);
  cache = prune_cache(std::move(cache), plan, true);
  CHECK(cache.layer(0).value_heads == plan.layers[0].representative);

  // With W_O = I the attention output per head is visible directly.
  LayerWeights lw = w.layers[0];
  lw.wo = Matrix::identity(c.model_dim);
  const Matrix y = clustered_forward(random_input(1, c.model_dim, gen), lw, cache, 0, plan.layers[0], true);
  for (std::size_t h = 0; h < 4; ++h) {
    const std::size_t rep = h % 2;
    for (std::size_t j = 0; j < 4; ++j) CHECK(y(0, h * 4 + j) == y(0, rep * 4 + j));
  }
  CHECK(cache.layer(0).values.size() == 2);
}

TEST_CASE("mode mismatches are reported") {
  const ModelConfig c = one_layer(4, 4);
  const Weights w = init_random(c, 16);
  std::mt19937_64 gen(16);
  KVCache cache(c);
  mha_forward(random_input(2, c.model_dim, gen), w.layers[0], cache, 0);
  const ClusterPlan plan = strided_plan(c, {2});
  // unpruned cache with a clustered call
  CHECK_THROWS_AS(clustered_forward(random_input(1, c.model_dim, gen), w.layers[0], cache, 0, plan.layers[0]),
                  ContractError);
  KVCache pruned = prune_cache(cache, plan);
  CHECK_THROWS_AS(mha_forward(random_input(1, c.model_dim, gen), w.layers[0], pruned, 0), ModeMismatchError);
  CHECK_THROWS_AS(prune_cache(pruned, plan), ContractError);
  const ClusterPlan other = strided_plan(c, {3});
  CHECK_THROWS_AS(clustered_forward(random_input(1, c.model_dim, gen), w.layers[0], pruned, 0, other.layers[0]),
                  ContractError);
}

TEST_CASE("prune_cache examples") {
  ModelConfig c = chai::testing::small_config(2, 32, 4);
  c.max_seq_len = 128;
  KVCache cache(c);
  for (std::size_t l = 0; l < 2; ++l) {
    LayerCache& lc = cache.layer(l);
    lc.length = 100;
    for (auto& k : lc.keys) k.assign(100 * 4, 0.5f);
    for (auto& v : lc.values) v.assign(100 * 4, 0.25f);
  }
  CHECK(cache.stored_key_vectors() == 2 * 3200);

  const KVCache same = prune_cache(cache, singleton_plan(c));
  for (std::size_t l = 0; l < 2; ++l) {
    CHECK(same.layer(l).keys == cache.layer(l).keys);
    CHECK(same.layer(l).values == cache.layer(l).values);
    CHECK(same.layer(l).key_heads == cache.layer(l).key_heads);
  }

  const KVCache one = prune_cache(cache, strided_plan(c, {1, 1}));
  for (std::size_t l = 0; l < 2; ++l) {
    CHECK(one.layer(l).key_heads.size() == 1);
    CHECK(one.layer(l).value_heads.size() == 32);
  }

  const KVCache k18 = prune_cache(cache, strided_plan(c, {18, 18}));
  CHECK(k18.stored_key_vectors() == 2 * 1800);
  CHECK(k18.stored_value_vectors() == 2 * 3200);
  CHECK(k18.length() == 100);
  for (std::size_t l = 0; l < 2; ++l) {
    CHECK(k18.layer(l).key_heads == strided_plan(c, {18, 18}).layers[l].representative);
  }
}

TEST_CASE("trace bookkeeping") {
  AttentionTrace t(2, 2);
  CHECK(t.steps() == 0);
  t.append(0, 0, {1.0f});
  t.append(0, 1, {1.0f});
  CHECK(t.steps(0) == 1);
  CHECK(t.steps() == 0);
}
