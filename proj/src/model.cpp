#include "chai/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <random>

#include "chai/errors.hpp"

namespace chai {

namespace {

constexpr char kMagic[8] = {'C', 'H', 'A', 'I', 'W', 'G', 'T', '1'};

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Every tensor in manifest order, paired with a pointer to its storage.
template <typename W, typename F>
void for_each_tensor(W& w, F&& fn) {
  auto vec = [&](const std::string& name, auto& v) { fn(name, 1, v.size(), v.data(), false); };
  auto mat = [&](const std::string& name, auto& m) { fn(name, m.rows(), m.cols(), m.data().data(), true); };
  mat("token_embedding", w.token_embedding);
  for (std::size_t l = 0; l < w.layers.size(); ++l) {
    auto& lw = w.layers[l];
    const std::string p = "layers." + std::to_string(l) + ".";
    mat(p + "wq", lw.wq);
    mat(p + "wk", lw.wk);
    mat(p + "wv", lw.wv);
    mat(p + "wo", lw.wo);
    vec(p + "attn_norm", lw.attn_norm);
    vec(p + "mlp_norm", lw.mlp_norm);
    mat(p + "w_gate", lw.w_gate);
    mat(p + "w_up", lw.w_up);
    mat(p + "w_down", lw.w_down);
  }
  vec("final_norm", w.final_norm);
  mat("output", w.output);
}

Weights zero_weights(const ModelConfig& c) {
  Weights w;
  w.config = c;
  const std::size_t d = c.model_dim;
  w.token_embedding = Matrix(c.vocab_size, d);
  for (std::size_t l = 0; l < c.num_layers; ++l) {
    LayerWeights lw;
    lw.wq = Matrix(d, d);
    lw.wk = Matrix(d, d);
    lw.wv = Matrix(d, d);
    lw.wo = Matrix(d, d);
    lw.attn_norm.assign(d, 1.0f);
    lw.mlp_norm.assign(d, 1.0f);
    lw.w_gate = Matrix(d, c.ffn_dim);
    lw.w_up = Matrix(d, c.ffn_dim);
    lw.w_down = Matrix(c.ffn_dim, d);
    w.layers.push_back(std::move(lw));
  }
  w.final_norm.assign(d, 1.0f);
  w.output = Matrix(d, c.vocab_size);
  return w;
}

std::uint32_t to_le(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) return __builtin_bswap32(v);
  return v;
}

std::uint64_t to_le64(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::big) return __builtin_bswap64(v);
  return v;
}

}  // namespace

void validate(const ModelConfig& c) {
  if (c.num_layers < 1 || c.num_heads < 1 || c.model_dim < 1 || c.head_dim < 1 || c.ffn_dim < 1 ||
      c.vocab_size < 1 || c.max_seq_len < 1) {
    throw ConfigError("every model config field must be at least 1");
  }
  if (c.model_dim != c.num_heads * c.head_dim) {
    throw ConfigError("model_dim " + std::to_string(c.model_dim) + " != num_heads " + std::to_string(c.num_heads) +
                      " * head_dim " + std::to_string(c.head_dim));
  }
  if (c.head_dim % 2 != 0) throw ConfigError("head_dim must be even for rotary embedding");
}

nlohmann::json to_json(const ModelConfig& c) {
  return {{"num_layers", c.num_layers}, {"num_heads", c.num_heads}, {"model_dim", c.model_dim},
          {"head_dim", c.head_dim},     {"ffn_dim", c.ffn_dim},     {"vocab_size", c.vocab_size},
          {"max_seq_len", c.max_seq_len}};
}

ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.num_layers = j.at("num_layers").get<std::size_t>();
  c.num_heads = j.at("num_heads").get<std::size_t>();
  c.model_dim = j.at("model_dim").get<std::size_t>();
  c.head_dim = j.at("head_dim").get<std::size_t>();
  c.ffn_dim = j.at("ffn_dim").get<std::size_t>();
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.max_seq_len = j.at("max_seq_len").get<std::size_t>();
  return c;
}

std::string fingerprint(const ModelConfig& config) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(to_json(config).dump())));
  return buf;
}

std::vector<TensorEntry> tensor_manifest(const ModelConfig& config) {
  validate(config);
  const Weights shape = zero_weights(config);
  std::vector<TensorEntry> out;
  for_each_tensor(shape, [&](const std::string& name, std::size_t r, std::size_t c, const float*, bool) {
    out.push_back({name, r, c});
  });
  return out;
}

Weights init_random(const ModelConfig& config, std::uint64_t seed) {
  validate(config);
  Weights w = zero_weights(config);
  std::mt19937_64 gen(seed);
  const float scale = 1.0f / std::sqrt(static_cast<float>(config.model_dim));
  for_each_tensor(w, [&](const std::string&, std::size_t r, std::size_t c, float* data, bool is_matrix) {
    if (!is_matrix) return;
    for (std::size_t i = 0; i < r * c; ++i) {
      const float unit = static_cast<float>(gen() >> 40) * 0x1.0p-24f;
      data[i] = (unit * 2.0f - 1.0f) * scale;
    }
  });
  return w;
}

Weights make_redundant(const Weights& weights, const ClusterPlan& plan) {
  const ModelConfig& c = weights.config;
  validate(plan, c);
  Weights out = weights;
  const std::size_t dh = c.head_dim;
  for (std::size_t l = 0; l < c.num_layers; ++l) {
    const LayerPlan& lp = plan.layers[l];
    LayerWeights& lw = out.layers[l];
    for (std::size_t h = 0; h < c.num_heads; ++h) {
      const std::size_t rep = lp.representative[lp.assignment[h]];
      if (rep == h) continue;
      for (std::size_t r = 0; r < c.model_dim; ++r) {
        for (std::size_t j = 0; j < dh; ++j) {
          lw.wq(r, h * dh + j) = weights.layers[l].wq(r, rep * dh + j);
          lw.wk(r, h * dh + j) = weights.layers[l].wk(r, rep * dh + j);
        }
      }
    }
  }
  return out;
}

void save_weights(const Weights& weights, const std::filesystem::path& path) {
  nlohmann::json header;
  header["config"] = to_json(weights.config);
  header["tensors"] = nlohmann::json::array();
  for (const auto& t : tensor_manifest(weights.config)) {
    header["tensors"].push_back({{"name", t.name}, {"rows", t.rows}, {"cols", t.cols}});
  }
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out.write(kMagic, sizeof kMagic);
  const std::uint64_t len = to_le64(text.size());
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for_each_tensor(weights, [&](const std::string&, std::size_t r, std::size_t c, const float* data, bool) {
    for (std::size_t i = 0; i < r * c; ++i) {
      const std::uint32_t bits = to_le(std::bit_cast<std::uint32_t>(data[i]));
      out.write(reinterpret_cast<const char*>(&bits), sizeof bits);
    }
  });
  if (!out) throw Error("write to " + path.string() + " failed");
}

Weights load_weights(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  if (bytes.size() < sizeof kMagic) throw TruncatedError(path.string() + ": file shorter than the magic");
  if (std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
    throw MagicError(path.string() + ": bad magic, expected CHAIWGT1");
  }
  std::size_t pos = sizeof kMagic;
  std::uint64_t header_len = 0;
  if (bytes.size() < pos + sizeof header_len) throw TruncatedError(path.string() + ": missing header length");
  std::memcpy(&header_len, bytes.data() + pos, sizeof header_len);
  header_len = to_le64(header_len);
  pos += sizeof header_len;
  if (bytes.size() - pos < header_len) throw TruncatedError(path.string() + ": header cut short");

  nlohmann::json header;
  ModelConfig config;
  try {
    header = nlohmann::json::parse(bytes.substr(pos, header_len));
    config = config_from_json(header.at("config"));
  } catch (const nlohmann::json::exception& e) {
    throw HeaderError(path.string() + ": malformed header: " + e.what());
  }
  pos += header_len;
  try {
    validate(config);
  } catch (const ConfigError& e) {
    throw HeaderError(path.string() + ": " + e.what());
  }

  const auto expected = tensor_manifest(config);
  const auto& tensors = header.at("tensors");
  if (tensors.size() != expected.size()) throw ShapeError(path.string() + ": tensor manifest does not match config");
  std::size_t total = 0;
  for (std::size_t i = 0; i < expected.size(); ++i) {
    const auto& t = tensors[i];
    if (t.value("name", "") != expected[i].name || t.value("rows", 0u) != expected[i].rows ||
        t.value("cols", 0u) != expected[i].cols) {
      throw ShapeError(path.string() + ": tensor " + std::to_string(i) + " does not match config (expected " +
                       expected[i].name + " " + std::to_string(expected[i].rows) + "x" +
                       std::to_string(expected[i].cols) + ")");
    }
    total += expected[i].rows * expected[i].cols;
  }
  if (bytes.size() - pos != total * sizeof(float)) {
    throw ShapeError(path.string() + ": payload holds " + std::to_string(bytes.size() - pos) + " bytes, header declares " +
                     std::to_string(total * sizeof(float)));
  }

  Weights w = zero_weights(config);
  for_each_tensor(w, [&](const std::string&, std::size_t r, std::size_t c, float* data, bool) {
    for (std::size_t i = 0; i < r * c; ++i) {
      std::uint32_t bits;
      std::memcpy(&bits, bytes.data() + pos, sizeof bits);
      data[i] = std::bit_cast<float>(to_le(bits));
      pos += sizeof bits;
    }
  });
  return w;
}

}  // namespace chai
