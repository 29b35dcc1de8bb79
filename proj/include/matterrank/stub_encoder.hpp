#pragma once

// Deterministic encoder used by tests and offline smoke runs: no weights, no
// context-sensitivity. Each token id maps to a fixed unit vector, identical
// across all 13 layers, so the context-average pipeline must reproduce the
// context-free pipeline bit for bit modulo the final mean.

#include <atomic>
#include <cstdint>
#include <string>

#include "matterrank/encoder.hpp"

namespace matterrank::extract {

class StubEncoder : public TokenEncoder {
 public:
  explicit StubEncoder(std::size_t hidden = 768, std::size_t max_len = 512)
      : hidden_(hidden), max_len_(max_len) {}

  TokenizedText tokenize_with_offsets(const std::string& text) const override {
    TokenizedText t = tokenizer_.tokenize(text);
    if (t.size() > max_len_) throw SequenceTooLongError(t.size(), max_len_);
    return t;
  }

  HiddenStates hidden_states(const TokenizedText& tokenized) const override {
    if (tokenized.size() == 0)
      throw std::invalid_argument("hidden_states: no tokens");
    if (tokenized.size() > max_len_)
      throw SequenceTooLongError(tokenized.size(), max_len_);
    ++forward_passes_;
    HiddenStates h(kLayers, tokenized.size(), hidden_);
    for (std::size_t t = 0; t < tokenized.size(); ++t) {
      const embedcore::Vector v = unit_vector_for_id(tokenized.ids[t], hidden_);
      for (std::size_t layer = 0; layer < kLayers; ++layer)
        for (std::size_t u = 0; u < hidden_; ++u) h.at(layer, t, u) = v[u];
    }
    return h;
  }

  std::size_t hidden_size() const override { return hidden_; }
  std::size_t layer_count() const override { return kLayers; }
  std::size_t max_sequence_length() const override { return max_len_; }
  std::string model_id() const override { return "stub-v1"; }

  // Token id -> unit vector rule: component c of the raw vector is
  // splitmix64(splitmix64(id) + 1 + c) scaled to [-1, 1), then the vector is
  // L2-normalized. Tests recompute this independently.
  static embedcore::Vector unit_vector_for_id(std::uint64_t id,
                                              std::size_t hidden) {
    std::vector<double> v(hidden);
    const std::uint64_t base = rng::splitmix64(id);
    double norm_sq = 0.0;
    for (std::size_t c = 0; c < hidden; ++c) {
      const std::uint64_t bits = rng::splitmix64(base + 1 + c);
      v[c] = static_cast<double>(bits >> 11) * 0x1.0p-52 - 1.0;
      norm_sq += v[c] * v[c];
    }
    const double n = std::sqrt(norm_sq);
    for (auto& x : v) x /= n;
    return embedcore::Vector(std::move(v));
  }

  std::size_t forward_passes() const { return forward_passes_.load(); }

  static constexpr std::size_t kLayers = 13;

 private:
  std::size_t hidden_;
  std::size_t max_len_;
  ChunkTokenizer tokenizer_;
  mutable std::atomic<std::size_t> forward_passes_{0};
};

}  // namespace matterrank::extract
