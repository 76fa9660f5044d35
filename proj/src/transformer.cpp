#include "chai/transformer.hpp"

#include <cmath>

#include "chai/errors.hpp"

namespace chai {

namespace {

void add_inplace(Matrix& x, const Matrix& delta) {
  auto dst = x.data();
  auto src = delta.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

Matrix norm_rows(const Matrix& x, std::span<const float> gain) {
  Matrix out(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto n = rms_norm(x.row(r), gain, kNormEps);
    std::copy(n.begin(), n.end(), out.row(r).begin());
  }
  return out;
}

}  // namespace

Transformer::Transformer(const Weights& weights) : weights_(weights) { validate(weights.config); }

Matrix Transformer::embed(std::span<const TokenId> tokens) const {
  const auto& c = weights_.config;
  Matrix x(tokens.size(), c.model_dim);
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    const TokenId id = tokens[t];
    if (id < 0 || static_cast<std::size_t>(id) >= c.vocab_size) {
      throw ArgumentError("token id " + std::to_string(id) + " outside vocabulary of " + std::to_string(c.vocab_size));
    }
    auto src = weights_.token_embedding.row(static_cast<std::size_t>(id));
    std::copy(src.begin(), src.end(), x.row(t).begin());
  }
  return x;
}

void Transformer::mlp_block(Matrix& x, const LayerWeights& lw) const {
  const Matrix h = norm_rows(x, lw.mlp_norm);
  Matrix gate = matmul(h, lw.w_gate);
  const Matrix up = matmul(h, lw.w_up);
  auto g = gate.data();
  auto u = up.data();
  for (std::size_t i = 0; i < g.size(); ++i) {
    const float s = g[i] / (1.0f + std::exp(-g[i]));
    g[i] = s * u[i];
  }
  add_inplace(x, matmul(gate, lw.w_down));
}

std::vector<float> Transformer::logits(std::span<const float> last) const {
  const auto normed = rms_norm(last, weights_.final_norm, kNormEps);
  const Matrix row(1, normed.size(), normed);
  return matmul(row, weights_.output).storage();
}

std::vector<float> Transformer::prefill(std::span<const TokenId> tokens, KVCache& cache, AttentionTrace* trace) const {
  if (tokens.empty()) throw ArgumentError("prefill needs at least one token");
  if (cache.length() + tokens.size() > weights_.config.max_seq_len) {
    throw ArgumentError("sequence would exceed max_seq_len " + std::to_string(weights_.config.max_seq_len));
  }
  Matrix x = embed(tokens);
  for (std::size_t l = 0; l < weights_.layers.size(); ++l) {
    const auto& lw = weights_.layers[l];
    add_inplace(x, mha_forward(norm_rows(x, lw.attn_norm), lw, cache, l, trace));
    mlp_block(x, lw);
  }
  return logits(x.row(x.rows() - 1));
}

std::vector<float> Transformer::decode(TokenId token, KVCache& cache, AttentionMode mode, AttentionTrace* trace) const {
  if (cache.length() + 1 > weights_.config.max_seq_len) {
    throw ArgumentError("sequence would exceed max_seq_len " + std::to_string(weights_.config.max_seq_len));
  }
  const TokenId one[] = {token};
  Matrix x = embed(one);
  for (std::size_t l = 0; l < weights_.layers.size(); ++l) {
    const auto& lw = weights_.layers[l];
    const Matrix h = norm_rows(x, lw.attn_norm);
    if (mode.plan) {
      add_inplace(x, clustered_forward(h, lw, cache, l, mode.plan->layers.at(l), mode.reuse_values));
    } else {
      add_inplace(x, mha_forward(h, lw, cache, l, trace));
    }
    mlp_block(x, lw);
  }
  return logits(x.row(0));
}

TokenId argmax(std::span<const float> logits) {
  if (logits.empty()) throw ArgumentError("argmax over empty logits");
  std::size_t best = 0;
  for (std::size_t i = 1; i < logits.size(); ++i) {
    if (logits[i] > logits[best]) best = i;
  }
  return static_cast<TokenId>(best);
}

std::vector<TokenId> bytes_to_tokens(std::string_view text) {
  std::vector<TokenId> out;
  out.reserve(text.size());
  for (unsigned char c : text) out.push_back(static_cast<TokenId>(c));
  return out;
}

}  // namespace chai
