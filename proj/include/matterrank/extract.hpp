#pragma once

// Material-name representations from a token encoder:
//   context-free    — forward the bare name, average its subword vectors
//   contextual      — forward a sentence, average the name's token span
//   context-average — unweighted mean of the contextual representations over
//                     a material's sampled context sentences
// plus token-span location by character offsets and sentence mean pooling.

#include <functional>
#include <string>
#include <vector>

#include "matterrank/encoder.hpp"
#include "matterrank/text.hpp"

namespace matterrank::extract {

// Inclusive token index range within one tokenized sentence.
struct TokenSpan {
  std::size_t start = 0;
  std::size_t end = 0;

  std::size_t length() const { return end - start + 1; }
};

struct ContextSentence {
  std::string sentence;
  std::string doc_id;

  friend bool operator==(const ContextSentence&,
                         const ContextSentence&) = default;
};

// A material's sampled context sentences with provenance.
struct ContextSet {
  std::string material_key;
  std::vector<ContextSentence> sentences;

  std::size_t size() const { return sentences.size(); }
};

class SpanNotFoundError : public std::runtime_error {
 public:
  explicit SpanNotFoundError(const std::string& name)
      : std::runtime_error("material name not found in sentence: " + name) {}
};

class NoUsableContextError : public std::runtime_error {
 public:
  explicit NoUsableContextError(const std::string& key)
      : std::runtime_error("all context sentences failed span location for: " +
                           key) {}
};

// Minimal token range whose character offsets cover the first occurrence of
// `name` (case-sensitive, non-word-character boundaries). Only the first
// occurrence is used when the name appears several times.
inline TokenSpan locate_first_span(const TokenizedText& sentence,
                                   const std::string& name) {
  const std::size_t pos = text::find_mention(sentence.text, name);
  if (pos == std::string::npos) throw SpanNotFoundError(name);
  const std::size_t lo = pos;
  const std::size_t hi = pos + name.size();
  std::size_t first = sentence.size(), last = sentence.size();
  for (std::size_t i = 0; i < sentence.size(); ++i) {
    const auto [b, e] = sentence.offsets[i];
    if (e <= lo || b >= hi) continue;  // no overlap
    if (first == sentence.size()) first = i;
    last = i;
  }
  if (first == sentence.size()) throw SpanNotFoundError(name);
  return {first, last};
}

// Mean of the per-token vectors over `span` under `spec`.
inline embedcore::Vector span_mean(const HiddenStates& h, TokenSpan span,
                                   const LayerSpec& spec) {
  if (span.end >= h.tokens() || span.start > span.end)
    throw std::invalid_argument("span out of range");
  const auto per_token = select_layer(h, spec);
  std::vector<embedcore::Vector> window(per_token.begin() + span.start,
                                        per_token.begin() + span.end + 1);
  return embedcore::mean_vectors(window);
}

struct ContextFreeResult {
  embedcore::Vector embedding;
  std::size_t token_count = 0;
};

// Forward the bare name and average across all of its token embeddings.
// Also reports the token count x for tokenizer-effect analysis.
inline ContextFreeResult context_free_embedding(const TokenEncoder& encoder,
                                                const std::string& name,
                                                const LayerSpec& spec) {
  const TokenizedText tok = encoder.tokenize_with_offsets(name);
  const HiddenStates h = encoder.hidden_states(tok);
  return {span_mean(h, {0, tok.size() - 1}, spec), tok.size()};
}

// Representation of the name within one sentence: mean of the span's token
// vectors from a forward pass over the whole sentence.
inline embedcore::Vector contextual_word_embedding(const TokenEncoder& encoder,
                                                   const TokenizedText& sentence,
                                                   TokenSpan span,
                                                   const LayerSpec& spec) {
  const HiddenStates h = encoder.hidden_states(sentence);
  return span_mean(h, span, spec);
}

using WarningSink = std::function<void(const std::string&)>;

struct ContextAverageResult {
  embedcore::Vector embedding;
  std::size_t sentences_used = 0;
  std::size_t sentences_dropped = 0;
};

// Unweighted mean of the contextual representations over all usable context
// sentences. Sentences that fail tokenization (over-long inputs are dropped,
// not truncated, to avoid cutting the mention) or span location are excluded
// with a warning; if none survive, NoUsableContextError.
inline ContextAverageResult context_average_embedding(
    const TokenEncoder& encoder, const ContextSet& contexts,
    const LayerSpec& spec, const WarningSink& warn = {}) {
  if (contexts.sentences.empty())
    throw std::invalid_argument("context_average_embedding: empty context set");
  std::vector<embedcore::Vector> reps;
  std::size_t dropped = 0;
  for (const auto& ctx : contexts.sentences) {
    try {
      const TokenizedText tok = encoder.tokenize_with_offsets(ctx.sentence);
      const TokenSpan span = locate_first_span(tok, contexts.material_key);
      reps.push_back(contextual_word_embedding(encoder, tok, span, spec));
    } catch (const std::exception& e) {
      ++dropped;
      if (warn)
        warn("dropping context sentence for '" + contexts.material_key +
             "': " + e.what());
    }
  }
  if (reps.empty()) throw NoUsableContextError(contexts.material_key);
  return {embedcore::mean_vectors(reps), reps.size(), dropped};
}

// Mean of final-layer vectors over valid (non-padding) tokens.
inline embedcore::Vector mean_pool_sentence(const HiddenStates& h,
                                            const std::vector<bool>& valid) {
  if (valid.size() != h.tokens())
    throw std::invalid_argument("mean_pool_sentence: mask length " +
                                std::to_string(valid.size()) +
                                " does not match token count " +
                                std::to_string(h.tokens()));
  const std::size_t last = h.layers() - 1;
  std::vector<embedcore::Vector> kept;
  for (std::size_t t = 0; t < h.tokens(); ++t)
    if (valid[t]) kept.push_back(h.token_vector(last, t));
  if (kept.empty())
    throw std::invalid_argument("mean_pool_sentence: no valid tokens in mask");
  return embedcore::mean_vectors(kept);
}

// --- all-layers variants -----------------------------------------------
// Layer sweeps need one vector per layer; these share a single forward pass
// per input instead of re-running the encoder 13 times.

struct AllLayersResult {
  std::vector<embedcore::Vector> per_layer;  // index k == LayerSpec single(k)
  std::size_t token_count = 0;
  std::size_t sentences_used = 0;
  std::size_t sentences_dropped = 0;
};

inline std::vector<embedcore::Vector> span_mean_all_layers(
    const HiddenStates& h, TokenSpan span) {
  std::vector<embedcore::Vector> out;
  out.reserve(h.layers());
  for (std::size_t k = 0; k < h.layers(); ++k)
    out.push_back(span_mean(h, span, LayerSpec::single(static_cast<int>(k))));
  return out;
}

inline AllLayersResult context_free_all_layers(const TokenEncoder& encoder,
                                               const std::string& name) {
  const TokenizedText tok = encoder.tokenize_with_offsets(name);
  const HiddenStates h = encoder.hidden_states(tok);
  AllLayersResult out;
  out.per_layer = span_mean_all_layers(h, {0, tok.size() - 1});
  out.token_count = tok.size();
  return out;
}

inline AllLayersResult context_average_all_layers(const TokenEncoder& encoder,
                                                  const ContextSet& contexts,
                                                  const WarningSink& warn = {}) {
  if (contexts.sentences.empty())
    throw std::invalid_argument("context_average_all_layers: empty context set");
  std::vector<std::vector<embedcore::Vector>> per_sentence;
  std::size_t dropped = 0;
  for (const auto& ctx : contexts.sentences) {
    try {
      const TokenizedText tok = encoder.tokenize_with_offsets(ctx.sentence);
      const TokenSpan span = locate_first_span(tok, contexts.material_key);
      const HiddenStates h = encoder.hidden_states(tok);
      per_sentence.push_back(span_mean_all_layers(h, span));
    } catch (const std::exception& e) {
      ++dropped;
      if (warn)
        warn("dropping context sentence for '" + contexts.material_key +
             "': " + e.what());
    }
  }
  if (per_sentence.empty()) throw NoUsableContextError(contexts.material_key);
  AllLayersResult out;
  out.sentences_used = per_sentence.size();
  out.sentences_dropped = dropped;
  const std::size_t layers = per_sentence.front().size();
  out.per_layer.reserve(layers);
  for (std::size_t k = 0; k < layers; ++k) {
    std::vector<embedcore::Vector> reps;
    reps.reserve(per_sentence.size());
    for (const auto& s : per_sentence) reps.push_back(s[k]);
    out.per_layer.push_back(embedcore::mean_vectors(reps));
  }
  return out;
}

}  // namespace matterrank::extract
