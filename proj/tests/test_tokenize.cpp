#include <catch2/catch_amalgamated.hpp>

#include <fstream>
#include <set>
#include <string>

#include <nlohmann/json.hpp>

#include "matterrank/tokenize.hpp"
#include "test_util.hpp"

using namespace matterrank;
using extract::TokenizedText;

namespace {

extract::WordpieceTokenizer fixture_tokenizer() {
  return extract::WordpieceTokenizer(
      extract::WordpieceVocab::from_file(mrtest::fixture("vocab_fixture.txt")));
}

nlohmann::json load_golden() {
  std::ifstream in(mrtest::fixture("tokenizer_golden.json"));
  REQUIRE(in.good());
  return nlohmann::json::parse(in);
}

// Every non-whitespace, non-control byte must be covered by exactly one
// token; offsets must be non-overlapping and non-decreasing.
void check_offset_integrity(const TokenizedText& t) {
  std::size_t prev_end = 0;
  std::set<std::size_t> covered;
  for (std::size_t i = 0; i < t.size(); ++i) {
    const auto [b, e] = t.offsets[i];
    REQUIRE(b < e);
    REQUIRE(b >= prev_end);
    prev_end = e;
    for (std::size_t p = b; p < e; ++p) covered.insert(p);
  }
  const auto cps = text::decode_utf8(t.text);
  for (const auto& c : cps) {
    const bool skippable = c.cp == 0 || c.cp == 0xFFFD ||
                           text::is_whitespace(c.cp) || text::is_control(c.cp);
    for (std::size_t p = c.begin; p < c.end; ++p) {
      if (skippable) {
        CHECK_FALSE(covered.contains(p));
      } else {
        CHECK(covered.contains(p));
      }
    }
  }
}

}  // namespace

TEST_CASE("wordpiece matches reference golden file") {
  const auto tok = fixture_tokenizer();
  const auto golden = load_golden();
  for (const auto& c : golden["cases"]) {
    const std::string text = c["text"];
    CAPTURE(text);
    const TokenizedText got = tok.tokenize(text);
    const auto& tokens = c["tokens"];
    REQUIRE(got.size() == tokens.size());
    for (std::size_t i = 0; i < got.size(); ++i) {
      CHECK(got.tokens[i] == tokens[i].get<std::string>());
      CHECK(got.ids[i] == c["ids"][i].get<std::uint64_t>());
      CHECK(got.offsets[i].first == c["offsets"][i][0].get<std::size_t>());
      CHECK(got.offsets[i].second == c["offsets"][i][1].get<std::size_t>());
    }
    check_offset_integrity(got);
  }
}

TEST_CASE("wordpiece golden token count for Cu2Se") {
  const auto tok = fixture_tokenizer();
  // Count frozen from the released-vocabulary golden file.
  CHECK(tok.tokenize("Cu2Se").size() == 3);
}

TEST_CASE("single in-vocabulary word is one token") {
  const auto tok = fixture_tokenizer();
  const auto t = tok.tokenize("thermoelectric");
  REQUIRE(t.size() == 1);
  CHECK(t.tokens[0] == "thermoelectric");
  CHECK(t.offsets[0] == std::make_pair(std::size_t{0}, std::size_t{14}));
}

TEST_CASE("empty input raises") {
  const auto tok = fixture_tokenizer();
  CHECK_THROWS_AS(tok.tokenize(""), std::invalid_argument);
  CHECK_THROWS_AS(tok.tokenize("   \t "), std::invalid_argument);
}

TEST_CASE("offset integrity on assembled random texts") {
  const auto tok = fixture_tokenizer();
  const std::vector<std::string> pool = {
      "Cu2Se", "Bi2Te3",  "thermoelectric", "zT",      "900",   "K",
      "α",     "–",       "unknownish",     "PbTe",    "high",  "value",
      "(",     ")",       ",",              ".",       "CoSb3", "Bi₂Te₃"};
  rng::SplitMix gen(2024);
  for (int trial = 0; trial < 50; ++trial) {
    std::string text;
    const int words = 1 + static_cast<int>(gen.next_below(12));
    for (int w = 0; w < words; ++w) {
      if (w) text += gen.next_below(5) == 0 ? "  " : " ";
      text += pool[gen.next_below(pool.size())];
    }
    CAPTURE(text);
    check_offset_integrity(tok.tokenize(text));
  }
}

TEST_CASE("unknown word collapses to UNK covering the whole word") {
  const auto tok = fixture_tokenizer();
  const auto t = tok.tokenize("qqqxyz");
  REQUIRE(t.size() == 1);
  CHECK(t.tokens[0] == "[UNK]");
  CHECK(t.offsets[0] == std::make_pair(std::size_t{0}, std::size_t{6}));
}

TEST_CASE("chunk tokenizer is word-local and deterministic") {
  const extract::ChunkTokenizer tok;
  // 14 codepoints -> chunks of 3: the, rmo, ele, ctr, ic
  const auto t = tok.tokenize("thermoelectric");
  REQUIRE(t.size() == 5);
  CHECK(t.tokens[0] == "the");
  CHECK(t.tokens[1] == "##rmo");
  CHECK(t.tokens[4] == "##ic");
  check_offset_integrity(t);

  // The same word inside a sentence produces the same ids.
  const auto s = tok.tokenize("good thermoelectric material");
  std::vector<std::uint64_t> inner(s.ids.begin() + 2, s.ids.begin() + 7);
  CHECK(inner == t.ids);

  // ids are content hashes of the token strings.
  CHECK(t.ids[0] == rng::hash_bytes("the"));
  CHECK(t.ids[1] == rng::hash_bytes("##rmo"));
}

TEST_CASE("chunk tokenizer splits punctuation and handles unicode") {
  const extract::ChunkTokenizer tok;
  const auto t = tok.tokenize("Cu2Se, α-MgAgSb.");
  const std::vector<std::string> want = {"Cu2", "##Se", ",",     "α",
                                         "-",   "MgA",  "##gSb", "."};
  REQUIRE(t.tokens == want);
  check_offset_integrity(t);
}
