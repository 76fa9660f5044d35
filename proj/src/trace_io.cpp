#include <charconv>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>
#include <tuple>

#include "chai/errors.hpp"
#include "chai/io.hpp"

namespace chai::io {

std::string format_float(float v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

void write_trace_csv(const AttentionTrace& trace, std::ostream& out) {
  out << "layer,head,step,position,probability\n";
  for (std::size_t l = 0; l < trace.num_layers(); ++l) {
    for (std::size_t h = 0; h < trace.num_heads(); ++h) {
      const auto& rows = trace.rows(l, h);
      for (std::size_t s = 0; s < rows.size(); ++s) {
        for (std::size_t p = 0; p < rows[s].size(); ++p) {
          out << l << ',' << h << ',' << (s + 1) << ',' << p << ',' << format_float(rows[s][p]) << '\n';
        }
      }
    }
  }
}

AttentionTrace read_trace_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line.rfind("layer,head,step,position,probability", 0) != 0) {
    throw FormatError("trace CSV must start with header layer,head,step,position,probability");
  }
  // (layer, head, step) -> position -> probability
  std::map<std::tuple<std::size_t, std::size_t, std::size_t>, std::map<std::size_t, float>> cells;
  std::size_t layers = 0, heads = 0, line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::size_t fields[4];
    float prob = 0.0f;
    const char* p = line.data();
    const char* end = line.data() + line.size();
    bool ok = true;
    for (auto& f : fields) {
      auto res = std::from_chars(p, end, f);
      if (res.ec != std::errc() || res.ptr == end || *res.ptr != ',') {
        ok = false;
        break;
      }
      p = res.ptr + 1;
    }
    if (ok) {
      auto res = std::from_chars(p, end, prob);
      ok = res.ec == std::errc() && res.ptr == end;
    }
    if (!ok || fields[2] == 0) throw FormatError("malformed trace line " + std::to_string(line_no));
    cells[{fields[0], fields[1], fields[2]}][fields[3]] = prob;
    layers = std::max(layers, fields[0] + 1);
    heads = std::max(heads, fields[1] + 1);
  }
  AttentionTrace trace(layers, heads);
  for (const auto& [key, row] : cells) {
    const auto [l, h, step] = key;
    if (trace.rows(l, h).size() + 1 != step) {
      throw FormatError("trace steps for layer " + std::to_string(l) + " head " + std::to_string(h) +
                        " are not contiguous from 1");
    }
    std::vector<float> values(row.size());
    for (const auto& [pos, v] : row) {
      if (pos >= values.size()) throw FormatError("trace positions are not contiguous from 0");
      values[pos] = v;
    }
    trace.append(l, h, std::move(values));
  }
  for (std::size_t l = 0; l < layers; ++l) {
    for (std::size_t h = 0; h < heads; ++h) {
      if (trace.rows(l, h).size() != trace.steps(l)) throw FormatError("trace heads have unequal step counts");
    }
  }
  return trace;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw Error("write to " + path.string() + " failed");
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_tokens(const std::filesystem::path& path, const std::vector<TokenId>& tokens) {
  std::string bytes(tokens.size() * 4, '\0');
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const auto u = static_cast<std::uint32_t>(tokens[i]);
    for (int b = 0; b < 4; ++b) bytes[i * 4 + b] = static_cast<char>((u >> (8 * b)) & 0xff);
  }
  write_text(path, bytes);
}

std::vector<TokenId> read_tokens(const std::filesystem::path& path) {
  const std::string bytes = read_text(path);
  if (bytes.size() % 4 != 0) throw FormatError(path.string() + ": token file length is not a multiple of 4");
  std::vector<TokenId> out(bytes.size() / 4);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint32_t u = 0;
    for (int b = 0; b < 4; ++b) u |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[i * 4 + b])) << (8 * b);
    out[i] = static_cast<TokenId>(u);
  }
  return out;
}

std::vector<std::vector<TokenId>> read_corpus(const std::filesystem::path& path) {
  std::istringstream in(read_text(path));
  std::vector<std::vector<TokenId>> corpus;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::vector<TokenId> sample;
    std::string tok;
    while (ls >> tok) {
      TokenId id = 0;
      const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), id);
      if (res.ec != std::errc() || res.ptr != tok.data() + tok.size()) {
        throw FormatError(path.string() + ": bad token '" + tok + "'");
      }
      sample.push_back(id);
    }
    if (!sample.empty()) corpus.push_back(std::move(sample));
  }
  return corpus;
}

std::string format_corpus(const std::vector<std::vector<TokenId>>& corpus) {
  std::ostringstream out;
  for (const auto& sample : corpus) {
    for (std::size_t i = 0; i < sample.size(); ++i) out << (i ? " " : "") << sample[i];
    out << '\n';
  }
  return out.str();
}

}  // namespace chai::io
