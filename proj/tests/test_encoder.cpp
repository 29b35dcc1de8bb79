#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "matterrank/stub_encoder.hpp"
#include "test_util.hpp"

using namespace matterrank;
using extract::HiddenStates;
using extract::LayerSpec;
using extract::StubEncoder;

namespace {

// Recompute the stub's hash-to-unit-vector rule independently.
std::vector<double> stub_rule(std::uint64_t id, std::size_t hidden) {
  std::vector<double> v(hidden);
  const std::uint64_t base = rng::splitmix64(id);
  for (std::size_t c = 0; c < hidden; ++c)
    v[c] = static_cast<double>(rng::splitmix64(base + 1 + c) >> 11) *
               std::pow(2.0, -52) -
           1.0;
  double n = 0;
  for (double x : v) n += x * x;
  n = std::sqrt(n);
  for (auto& x : v) x /= n;
  return v;
}

}  // namespace

TEST_CASE("layer spec parse and format round trip") {
  CHECK(LayerSpec::parse("single(3)").str() == "single(3)");
  CHECK(LayerSpec::parse("sum(2,0,1)").str() == "sum(0,1,2)");  // canonical set
  CHECK(LayerSpec::parse("average(4,2)").str() == "average(2,4)");
  CHECK(LayerSpec::parse("concat(2,1)").str() == "concat(2,1)");  // order kept
  CHECK(LayerSpec::parse("concat(1,2)").output_dim(768) == 1536);
  CHECK(LayerSpec::parse("sum(1,2)").output_dim(768) == 768);
  CHECK_THROWS_AS(LayerSpec::parse("single(1,2)"), ConfigError);
  CHECK_THROWS_AS(LayerSpec::parse("blah(1)"), ConfigError);
  CHECK_THROWS_AS(LayerSpec::parse("single(x)"), ConfigError);
  CHECK_THROWS_AS(LayerSpec::single(13).validate(13), std::invalid_argument);
  CHECK_THROWS_AS(LayerSpec::single(-1).validate(13), std::invalid_argument);
  CHECK_NOTHROW(LayerSpec::single(12).validate(13));
}

TEST_CASE("stub encoder produces the documented 13 x T x 768 grid") {
  StubEncoder enc;
  const auto tok = enc.tokenize_with_offsets("zT of PbTe");  // 3 words, short
  REQUIRE(tok.size() == 4);  // zT | of | PbT e
  const auto sub = enc.tokenize_with_offsets("zT of Pb");
  REQUIRE(sub.size() == 3);
  const auto h = enc.hidden_states(sub);
  CHECK(h.layers() == 13);
  CHECK(h.tokens() == 3);
  CHECK(h.hidden() == 768);
  for (std::size_t t = 0; t < 3; ++t) {
    const auto want = stub_rule(sub.ids[t], 768);
    for (std::size_t u = 0; u < 768; u += 97)
      CHECK(h.at(0, t, u) == want[u]);
    // identical across all layers
    for (std::size_t layer = 1; layer < 13; ++layer)
      CHECK(h.at(layer, t, 5) == h.at(0, t, 5));
  }
}

TEST_CASE("stub encoder is deterministic") {
  StubEncoder enc;
  const auto tok = enc.tokenize_with_offsets("Cu2Se shows high zT");
  const auto h1 = enc.hidden_states(tok);
  const auto h2 = enc.hidden_states(tok);
  CHECK(h1.raw() == h2.raw());
}

TEST_CASE("over-long input raises an error carrying the limit") {
  StubEncoder enc(16, 8);  // tiny limit
  std::string text;
  for (int i = 0; i < 30; ++i) text += "word ";
  try {
    enc.tokenize_with_offsets(text);
    FAIL("expected SequenceTooLongError");
  } catch (const extract::SequenceTooLongError& e) {
    CHECK(e.limit() == 8);
    CHECK(std::string(e.what()).find("8") != std::string::npos);
  }
}

TEST_CASE("select_layer single returns the layer verbatim") {
  StubEncoder enc(32);
  const auto tok = enc.tokenize_with_offsets("good material");
  const auto h = enc.hidden_states(tok);
  const auto vs = extract::select_layer(h, LayerSpec::single(3));
  REQUIRE(vs.size() == h.tokens());
  for (std::size_t t = 0; t < h.tokens(); ++t)
    for (std::size_t u = 0; u < h.hidden(); ++u)
      CHECK(vs[t][u] == h.at(3, t, u));
}

TEST_CASE("select_layer sum and average combine component-wise") {
  HiddenStates h(5, 2, 4);
  for (std::size_t layer = 0; layer < 5; ++layer)
    for (std::size_t t = 0; t < 2; ++t)
      for (std::size_t u = 0; u < 4; ++u)
        h.at(layer, t, u) = static_cast<double>(layer);
  const auto avg = extract::select_layer(h, LayerSpec::average({2, 4}));
  CHECK(avg[0][0] == 3.0);
  CHECK(avg[1][3] == 3.0);
  const auto sum = extract::select_layer(h, LayerSpec::sum({2, 4}));
  CHECK(sum[0][0] == 6.0);
}

TEST_CASE("select_layer concat matches manual append") {
  StubEncoder enc;  // 768-dim
  const auto tok = enc.tokenize_with_offsets("alloy");
  const auto h = enc.hidden_states(tok);
  const auto got = extract::select_layer(h, LayerSpec::concat({1, 2}));
  REQUIRE(got.size() == h.tokens());
  for (std::size_t t = 0; t < h.tokens(); ++t) {
    REQUIRE(got[t].dim() == 1536);
    std::vector<double> manual;
    for (int k : {1, 2})
      for (std::size_t u = 0; u < 768; ++u)
        manual.push_back(h.at(static_cast<std::size_t>(k), t, u));
    CHECK(got[t].values() == manual);
  }
}

TEST_CASE("select_layer rejects out-of-range layers") {
  StubEncoder enc(8);
  const auto h = enc.hidden_states(enc.tokenize_with_offsets("x"));
  CHECK_THROWS_AS(extract::select_layer(h, LayerSpec::single(13)),
                  std::invalid_argument);
}
