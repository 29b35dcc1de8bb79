#pragma once

// Token-embedding encoder abstraction: hidden-state grids, layer selection
// and combination, and the interface every concrete encoder implements.

#include <cstdint>
#include <memory>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "matterrank/embedcore.hpp"
#include "matterrank/tokenize.hpp"

namespace matterrank::extract {

// layers x tokens x hidden grid of finite values; layer 0 is the initial
// embedding layer, layers 1..L-1 the encoder block outputs.
class HiddenStates {
 public:
  HiddenStates(std::size_t layers, std::size_t tokens, std::size_t hidden)
      : layers_(layers),
        tokens_(tokens),
        hidden_(hidden),
        data_(layers * tokens * hidden, 0.0) {
    if (layers == 0 || tokens == 0 || hidden == 0)
      throw std::invalid_argument("HiddenStates: zero-sized grid");
  }

  std::size_t layers() const { return layers_; }
  std::size_t tokens() const { return tokens_; }
  std::size_t hidden() const { return hidden_; }

  double& at(std::size_t layer, std::size_t token, std::size_t unit) {
    return data_[(layer * tokens_ + token) * hidden_ + unit];
  }
  double at(std::size_t layer, std::size_t token, std::size_t unit) const {
    return data_[(layer * tokens_ + token) * hidden_ + unit];
  }

  embedcore::Vector token_vector(std::size_t layer, std::size_t token) const {
    const double* base = data_.data() + (layer * tokens_ + token) * hidden_;
    return embedcore::Vector(std::vector<double>(base, base + hidden_));
  }

  const std::vector<double>& raw() const { return data_; }

 private:
  std::size_t layers_, tokens_, hidden_;
  std::vector<double> data_;
};

// How per-token vectors are formed from the layer grid: a single layer, a
// component-wise sum or average over a layer set, or a concatenation.
struct LayerSpec {
  enum class Mode { kSingle, kSum, kAverage, kConcat };

  Mode mode = Mode::kSingle;
  std::vector<int> layers = {3};

  static LayerSpec single(int k) { return {Mode::kSingle, {k}}; }
  static LayerSpec sum(std::vector<int> ls) {
    return {Mode::kSum, canonical(std::move(ls))};
  }
  static LayerSpec average(std::vector<int> ls) {
    return {Mode::kAverage, canonical(std::move(ls))};
  }
  static LayerSpec concat(std::vector<int> ls) {
    return {Mode::kConcat, std::move(ls)};  // order matters
  }

  // Textual form used in stores, manifests and on the CLI:
  //   single(3) | sum(0,1,2) | average(2,4) | concat(1,2)
  static LayerSpec parse(const std::string& s) {
    const auto open = s.find('(');
    if (open == std::string::npos || s.back() != ')')
      throw ConfigError("bad layer spec: " + s);
    const std::string name = s.substr(0, open);
    std::vector<int> ls;
    std::stringstream body(s.substr(open + 1, s.size() - open - 2));
    std::string item;
    while (std::getline(body, item, ',')) {
      try {
        std::size_t used = 0;
        const int v = std::stoi(item, &used);
        if (used != item.size()) throw std::invalid_argument(item);
        ls.push_back(v);
      } catch (const std::exception&) {
        throw ConfigError("bad layer index '" + item + "' in spec: " + s);
      }
    }
    if (ls.empty()) throw ConfigError("layer spec lists no layers: " + s);
    if (name == "single") {
      if (ls.size() != 1)
        throw ConfigError("single() takes exactly one layer: " + s);
      return single(ls[0]);
    }
    if (name == "sum") return sum(std::move(ls));
    if (name == "average") return average(std::move(ls));
    if (name == "concat") return concat(std::move(ls));
    throw ConfigError("unknown layer spec mode: " + s);
  }

  std::string str() const {
    std::string out;
    switch (mode) {
      case Mode::kSingle: out = "single("; break;
      case Mode::kSum: out = "sum("; break;
      case Mode::kAverage: out = "average("; break;
      case Mode::kConcat: out = "concat("; break;
    }
    for (std::size_t i = 0; i < layers.size(); ++i) {
      if (i) out.push_back(',');
      out += std::to_string(layers[i]);
    }
    out.push_back(')');
    return out;
  }

  std::size_t output_dim(std::size_t hidden) const {
    return mode == Mode::kConcat ? hidden * layers.size() : hidden;
  }

  void validate(std::size_t layer_count) const {
    if (layers.empty())
      throw std::invalid_argument("layer spec lists no layers");
    for (int k : layers)
      if (k < 0 || static_cast<std::size_t>(k) >= layer_count)
        throw std::invalid_argument("layer index " + std::to_string(k) +
                                    " out of range 0.." +
                                    std::to_string(layer_count - 1));
  }

 private:
  static std::vector<int> canonical(std::vector<int> ls) {
    std::set<int> s(ls.begin(), ls.end());
    return {s.begin(), s.end()};
  }
};

// One vector per token under the given spec.
inline std::vector<embedcore::Vector> select_layer(const HiddenStates& h,
                                                   const LayerSpec& spec) {
  spec.validate(h.layers());
  std::vector<embedcore::Vector> out;
  out.reserve(h.tokens());
  for (std::size_t t = 0; t < h.tokens(); ++t) {
    switch (spec.mode) {
      case LayerSpec::Mode::kSingle:
        out.push_back(h.token_vector(spec.layers[0], t));
        break;
      case LayerSpec::Mode::kSum:
      case LayerSpec::Mode::kAverage: {
        embedcore::Vector v(h.hidden());
        for (int k : spec.layers)
          for (std::size_t u = 0; u < h.hidden(); ++u) v[u] += h.at(k, t, u);
        if (spec.mode == LayerSpec::Mode::kAverage) {
          const double inv = 1.0 / static_cast<double>(spec.layers.size());
          for (auto& x : v.values()) x *= inv;
        }
        out.push_back(std::move(v));
        break;
      }
      case LayerSpec::Mode::kConcat: {
        std::vector<double> v;
        v.reserve(h.hidden() * spec.layers.size());
        for (int k : spec.layers)
          for (std::size_t u = 0; u < h.hidden(); ++u)
            v.push_back(h.at(k, t, u));
        out.push_back(embedcore::Vector(std::move(v)));
        break;
      }
    }
  }
  return out;
}

// A loaded token-embedding encoder. Implementations are read-only after
// construction and must serve concurrent forward passes; callers may submit
// from multiple workers and must not assume ordering between calls.
class TokenEncoder {
 public:
  virtual ~TokenEncoder() = default;

  // Throws std::invalid_argument on empty input and SequenceTooLongError when
  // the token count exceeds max_sequence_length().
  virtual TokenizedText tokenize_with_offsets(const std::string& text) const = 0;

  // layer_count() x tokens x hidden_size() grid; deterministic for a fixed
  // checkpoint in inference mode.
  virtual HiddenStates hidden_states(const TokenizedText& tokenized) const = 0;

  virtual std::size_t hidden_size() const = 0;
  virtual std::size_t layer_count() const = 0;
  virtual std::size_t max_sequence_length() const = 0;
  virtual std::string model_id() const = 0;
};

}  // namespace matterrank::extract
