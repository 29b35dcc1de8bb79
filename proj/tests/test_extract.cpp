#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>

#include "matterrank/extract.hpp"
#include "matterrank/stub_encoder.hpp"
#include "test_util.hpp"

using namespace matterrank;
using extract::ContextSentence;
using extract::ContextSet;
using extract::LayerSpec;
using extract::StubEncoder;
using extract::TokenSpan;

namespace {

extract::WordpieceTokenizer fixture_tokenizer() {
  return extract::WordpieceTokenizer(
      extract::WordpieceVocab::from_file(mrtest::fixture("vocab_fixture.txt")));
}

// Independent span oracle: scan characters for the first boundary match,
// then collect every token whose offsets intersect the character range.
TokenSpan offset_scan_oracle(const extract::TokenizedText& t,
                             const std::string& name) {
  auto wordlike = [](unsigned char c) { return std::isalnum(c) != 0; };
  std::size_t pos = std::string::npos;
  for (std::size_t i = 0; i + name.size() <= t.text.size(); ++i) {
    if (t.text.compare(i, name.size(), name) != 0) continue;
    if (i > 0 && wordlike(t.text[i - 1])) continue;
    if (i + name.size() < t.text.size() && wordlike(t.text[i + name.size()]))
      continue;
    pos = i;
    break;
  }
  REQUIRE(pos != std::string::npos);
  std::size_t first = SIZE_MAX, last = 0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (t.offsets[i].second > pos && t.offsets[i].first < pos + name.size()) {
      first = std::min(first, i);
      last = std::max(last, i);
    }
  }
  return {first, last};
}

double max_abs_diff(const embedcore::Vector& a, const embedcore::Vector& b) {
  REQUIRE(a.dim() == b.dim());
  double m = 0;
  for (std::size_t i = 0; i < a.dim(); ++i)
    m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("locate_first_span at sentence start across 3 subwords") {
  const auto tok = fixture_tokenizer();
  const auto t = tok.tokenize("Cu2Se is a good thermoelectric material.");
  const auto span = extract::locate_first_span(t, "Cu2Se");
  CHECK(span.start == 0);
  CHECK(span.end == 2);
}

TEST_CASE("locate_first_span uses only the first occurrence") {
  const auto tok = fixture_tokenizer();
  const auto t = tok.tokenize("Cu2Se, Cu2Se again (first occurrence matters)");
  const auto span = extract::locate_first_span(t, "Cu2Se");
  CHECK(span.start == 0);
  CHECK(span.end == 2);
  // The second mention sits past the comma.
  CHECK(t.offsets[span.end].second == 5);
}

TEST_CASE("locate_first_span respects word boundaries") {
  StubEncoder enc;
  const auto t = enc.tokenize_with_offsets("xPbTe PbTe");
  // "PbTe" inside "xPbTe" must not match; the standalone one does.
  const auto span = extract::locate_first_span(t, "PbTe");
  CHECK(t.offsets[span.start].first == 6);
}

TEST_CASE("locate_first_span mid-sentence matches offset-scan oracle") {
  const auto tok = fixture_tokenizer();
  const std::vector<std::pair<std::string, std::string>> cases = {
      {"the sample of Cu2Se was measured at 900 K.", "Cu2Se"},
      {"doped PbTe exhibits high zT value.", "PbTe"},
      {"we measured Bi2Te3 and Cu2Se.", "Bi2Te3"},
      {"good thermoelectric materials are reported.", "thermoelectric"},
  };
  for (const auto& [sentence, name] : cases) {
    CAPTURE(sentence, name);
    const auto t = tok.tokenize(sentence);
    const auto got = extract::locate_first_span(t, name);
    const auto want = offset_scan_oracle(t, name);
    CHECK(got.start == want.start);
    CHECK(got.end == want.end);
  }
}

TEST_CASE("locate_first_span throws when the name is absent") {
  StubEncoder enc;
  const auto t = enc.tokenize_with_offsets("nothing to see here");
  CHECK_THROWS_AS(extract::locate_first_span(t, "Cu2Se"),
                  extract::SpanNotFoundError);
}

TEST_CASE("context_free_embedding: single-token name is that vector") {
  StubEncoder enc(64);
  // "zT" is one chunk.
  const auto r = extract::context_free_embedding(enc, "zT", LayerSpec::single(3));
  CHECK(r.token_count == 1);
  const auto want = StubEncoder::unit_vector_for_id(rng::hash_bytes("zT"), 64);
  CHECK(max_abs_diff(r.embedding, want) == 0.0);
}

TEST_CASE("context_free_embedding: two tokens average") {
  StubEncoder enc(64);
  // "PbTeX" -> chunks "PbT" and "##eX"
  const auto r =
      extract::context_free_embedding(enc, "PbTeX", LayerSpec::single(0));
  CHECK(r.token_count == 2);
  const auto u = StubEncoder::unit_vector_for_id(rng::hash_bytes("PbT"), 64);
  const auto v = StubEncoder::unit_vector_for_id(rng::hash_bytes("##eX"), 64);
  for (std::size_t i = 0; i < 64; ++i)
    CHECK(r.embedding[i] == Catch::Approx((u[i] + v[i]) / 2.0).margin(1e-15));
}

TEST_CASE("contextual_word_embedding span of length one") {
  StubEncoder enc(32);
  const auto t = enc.tokenize_with_offsets("the zT value");
  const auto span = extract::locate_first_span(t, "zT");
  REQUIRE(span.start == span.end);
  const auto v =
      extract::contextual_word_embedding(enc, t, span, LayerSpec::single(5));
  const auto h = enc.hidden_states(t);
  CHECK(max_abs_diff(v, h.token_vector(5, span.start)) == 0.0);
}

TEST_CASE("stub collapses contextual to context-free") {
  StubEncoder enc(48);
  const std::string name = "Cu2Se";
  const auto free = extract::context_free_embedding(enc, name, LayerSpec::single(3));
  const auto t = enc.tokenize_with_offsets("the Cu2Se sample was measured");
  const auto span = extract::locate_first_span(t, name);
  const auto ctx =
      extract::contextual_word_embedding(enc, t, span, LayerSpec::single(3));
  CHECK(max_abs_diff(free.embedding, ctx) < 1e-15);
}

TEST_CASE("context_average over duplicated sentences equals the single rep") {
  StubEncoder enc(32);
  const std::string sentence = "the Bi2Te3 crystal shows high performance";
  for (std::size_t n : {1u, 3u, 10u}) {
    ContextSet cs{"Bi2Te3", {}};
    for (std::size_t i = 0; i < n; ++i)
      cs.sentences.push_back({sentence, "doc" + std::to_string(i)});
    const auto avg =
        extract::context_average_embedding(enc, cs, LayerSpec::single(3));
    CHECK(avg.sentences_used == n);
    const auto t = enc.tokenize_with_offsets(sentence);
    const auto single = extract::contextual_word_embedding(
        enc, t, extract::locate_first_span(t, "Bi2Te3"), LayerSpec::single(3));
    CHECK(max_abs_diff(avg.embedding, single) < 1e-9);
  }
}

TEST_CASE("context_average is permutation-invariant and multiset-stable") {
  StubEncoder enc(32);
  ContextSet cs{"PbTe", {}};
  cs.sentences.push_back({"PbTe is a classic compound", "d1"});
  cs.sentences.push_back({"we measured PbTe at 300 K", "d2"});
  cs.sentences.push_back({"the PbTe sample shows low conductivity", "d3"});
  const auto base =
      extract::context_average_embedding(enc, cs, LayerSpec::single(2));

  ContextSet rev{"PbTe", {cs.sentences.rbegin(), cs.sentences.rend()}};
  const auto perm =
      extract::context_average_embedding(enc, rev, LayerSpec::single(2));
  CHECK(max_abs_diff(base.embedding, perm.embedding) < 1e-12);

  ContextSet doubled{"PbTe", cs.sentences};
  doubled.sentences.insert(doubled.sentences.end(), cs.sentences.begin(),
                           cs.sentences.end());
  const auto dup =
      extract::context_average_embedding(enc, doubled, LayerSpec::single(2));
  CHECK(max_abs_diff(base.embedding, dup.embedding) < 1e-9);
}

TEST_CASE("context_average drops bad sentences with warnings") {
  StubEncoder enc(32, 12);  // short max length
  ContextSet cs{"PbTe", {}};
  cs.sentences.push_back({"PbTe is good", "d1"});
  cs.sentences.push_back({"no mention here", "d2"});  // span failure
  std::string overlong = "PbTe";
  for (int i = 0; i < 30; ++i) overlong += " word";
  cs.sentences.push_back({overlong, "d3"});  // length failure -> dropped
  std::vector<std::string> warnings;
  const auto r = extract::context_average_embedding(
      enc, cs, LayerSpec::single(1),
      [&](const std::string& w) { warnings.push_back(w); });
  CHECK(r.sentences_used == 1);
  CHECK(r.sentences_dropped == 2);
  CHECK(warnings.size() == 2);
}

TEST_CASE("context_average with no usable sentence raises") {
  StubEncoder enc(32);
  ContextSet cs{"Cu2Se", {{"entirely unrelated text", "d"}}};
  CHECK_THROWS_AS(
      extract::context_average_embedding(enc, cs, LayerSpec::single(0)),
      extract::NoUsableContextError);
}

TEST_CASE("single(k) then mean equals average({k}) then mean") {
  StubEncoder enc(40);
  const auto t = enc.tokenize_with_offsets("skutterudite compounds are complex");
  const auto h = enc.hidden_states(t);
  const TokenSpan all{0, t.size() - 1};
  const auto a = extract::span_mean(h, all, LayerSpec::single(4));
  const auto b = extract::span_mean(h, all, LayerSpec::average({4}));
  CHECK(max_abs_diff(a, b) == 0.0);
}

TEST_CASE("mean_pool_sentence basic and oracle cases") {
  StubEncoder enc(24);
  const auto t = enc.tokenize_with_offsets("hi yo");
  REQUIRE(t.size() == 2);
  const auto h = enc.hidden_states(t);

  const auto pooled = extract::mean_pool_sentence(h, {true, true});
  const std::size_t last = h.layers() - 1;
  for (std::size_t u = 0; u < h.hidden(); ++u)
    CHECK(pooled[u] ==
          Catch::Approx((h.at(last, 0, u) + h.at(last, 1, u)) / 2.0)
              .margin(1e-15));

  const auto solo = extract::mean_pool_sentence(h, {false, true});
  CHECK(max_abs_diff(solo, h.token_vector(last, 1)) == 0.0);

  CHECK_THROWS_AS(extract::mean_pool_sentence(h, {false, false}),
                  std::invalid_argument);
  CHECK_THROWS_AS(extract::mean_pool_sentence(h, {true}),
                  std::invalid_argument);
}

TEST_CASE("mean_pool_sentence random mask matches masked-sum oracle") {
  StubEncoder enc(16);
  const auto t = enc.tokenize_with_offsets(
      "many different words in this rather long example sentence");
  const auto h = enc.hidden_states(t);
  rng::SplitMix gen(3);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<bool> mask(h.tokens());
    std::size_t count = 0;
    for (std::size_t i = 0; i < mask.size(); ++i) {
      mask[i] = gen.next_below(2) == 1;
      count += mask[i];
    }
    if (count == 0) {
      mask[0] = true;
      count = 1;
    }
    const auto pooled = extract::mean_pool_sentence(h, mask);
    const std::size_t last = h.layers() - 1;
    for (std::size_t u = 0; u < h.hidden(); ++u) {
      double sum = 0;
      for (std::size_t i = 0; i < mask.size(); ++i)
        if (mask[i]) sum += h.at(last, i, u);
      CHECK(pooled[u] == Catch::Approx(sum / static_cast<double>(count))
                             .margin(1e-12));
    }
  }
}

TEST_CASE("all-layers helpers agree with per-layer extraction") {
  StubEncoder enc(20);
  const auto free = extract::context_free_all_layers(enc, "Bi2Te3");
  REQUIRE(free.per_layer.size() == 13);
  for (int k : {0, 3, 12}) {
    const auto single =
        extract::context_free_embedding(enc, "Bi2Te3", LayerSpec::single(k));
    CHECK(max_abs_diff(free.per_layer[static_cast<std::size_t>(k)],
                       single.embedding) == 0.0);
  }

  ContextSet cs{"Bi2Te3", {{"the Bi2Te3 crystal", "d1"},
                           {"Bi2Te3 is widely used", "d2"}}};
  const auto avg_all = extract::context_average_all_layers(enc, cs);
  const auto avg3 =
      extract::context_average_embedding(enc, cs, LayerSpec::single(3));
  CHECK(max_abs_diff(avg_all.per_layer[3], avg3.embedding) < 1e-15);
}
