#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "chai/attention.hpp"
#include "chai/transformer.hpp"

namespace chai::io {

// CSV with header layer,head,step,position,probability; one line per entry.
void write_trace_csv(const AttentionTrace& trace, std::ostream& out);
AttentionTrace read_trace_csv(std::istream& in);

void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

// Raw little-endian int32 token ids.
void write_tokens(const std::filesystem::path& path, const std::vector<TokenId>& tokens);
std::vector<TokenId> read_tokens(const std::filesystem::path& path);

// One sample per non-empty line, whitespace-separated token ids.
std::vector<std::vector<TokenId>> read_corpus(const std::filesystem::path& path);
std::string format_corpus(const std::vector<std::vector<TokenId>>& corpus);

// Shortest text that parses back to the same float.
std::string format_float(float v);

}  // namespace chai::io
