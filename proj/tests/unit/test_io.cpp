#include <doctest.h>

#include <filesystem>
#include <sstream>

#include "chai/errors.hpp"
#include "chai/io.hpp"

using namespace chai;

TEST_CASE("trace csv round trip") {
  AttentionTrace t(2, 2);
  for (std::size_t l = 0; l < 2; ++l)
    for (std::size_t s = 1; s <= 3; ++s) {
      t.append(l, 0, std::vector<float>(s, 1.0f / static_cast<float>(s)));
      std::vector<float> r(s, 0.0f);
      r[0] = 1.0f;
      t.append(l, 1, r);
    }
  std::stringstream ss;
  io::write_trace_csv(t, ss);
  CHECK(ss.str().rfind("layer,head,step,position,probability\n", 0) == 0);
  CHECK(io::read_trace_csv(ss) == t);
}

TEST_CASE("malformed trace csv") {
  std::stringstream no_header("1,2,3\n");
  CHECK_THROWS_AS(io::read_trace_csv(no_header), FormatError);
  std::stringstream bad("layer,head,step,position,probability\n0,0,1,0,abc\n");
  CHECK_THROWS_AS(io::read_trace_csv(bad), FormatError);
  std::stringstream gap("layer,head,step,position,probability\n0,0,2,0,1\n");
  CHECK_THROWS_AS(io::read_trace_csv(gap), FormatError);
}

TEST_CASE("token files and corpora") {
  const auto dir = std::filesystem::temp_directory_path() / "chai_unit";
  std::filesystem::create_directories(dir);
  const std::vector<TokenId> toks = {0, 1, 255, 70000, -3};
  io::write_tokens(dir / "t.bin", toks);
  CHECK(io::read_tokens(dir / "t.bin") == toks);
  io::write_text(dir / "odd.bin", "abc");
  CHECK_THROWS_AS(io::read_tokens(dir / "odd.bin"), FormatError);

  const std::vector<std::vector<TokenId>> corpus = {{1, 2, 3}, {4}};
  io::write_text(dir / "c.txt", io::format_corpus(corpus) + "\n\n");
  CHECK(io::read_corpus(dir / "c.txt") == corpus);
  io::write_text(dir / "bad.txt", "1 x 3\n");
  CHECK_THROWS_AS(io::read_corpus(dir / "bad.txt"), FormatError);
}

TEST_CASE("format_float round trips") {
  for (float v : {0.1f, 1.0f / 3.0f, 1e-20f, 0.0f}) CHECK(std::stof(io::format_float(v)) == v);
}
