#pragma once

// Subword tokenization with byte offsets into the source text. Two flavours:
//   - WordpieceTokenizer: BERT-style basic split + greedy longest-match
//     WordPiece against a vocab.txt, matching the reference implementation
//     shipped with the encoders (cased, no accent stripping).
//   - ChunkTokenizer: asset-free deterministic splitter used by the stub and
//     toy encoders; words become runs of at most 3 codepoints.
//
// Offsets are byte ranges [begin, end) into the original string. Every
// non-whitespace, non-control character is covered by exactly one token.

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "matterrank/errors.hpp"
#include "matterrank/io_util.hpp"
#include "matterrank/rng.hpp"
#include "matterrank/text.hpp"

namespace matterrank::extract {

struct TokenizedText {
  std::string text;  // source the offsets point into
  std::vector<std::string> tokens;
  std::vector<std::uint64_t> ids;
  std::vector<std::pair<std::size_t, std::size_t>> offsets;

  std::size_t size() const { return tokens.size(); }
  std::string_view token_source(std::size_t i) const {
    return std::string_view(text).substr(offsets[i].first,
                                         offsets[i].second - offsets[i].first);
  }
};

// Raised when an input tokenizes past an encoder's sequence limit.
class SequenceTooLongError : public ModelError {
 public:
  SequenceTooLongError(std::size_t count, std::size_t limit)
      : ModelError("sequence of " + std::to_string(count) +
                   " tokens exceeds encoder max sequence length " +
                   std::to_string(limit)),
        limit_(limit) {}
  std::size_t limit() const { return limit_; }

 private:
  std::size_t limit_;
};

namespace detail {

// One pre-tokenized word: a run of codepoints with byte offsets.
struct Word {
  std::vector<text::Codepoint> cps;
};

// BERT basic tokenization: drop control chars, split on whitespace, isolate
// punctuation and CJK characters.
inline std::vector<Word> basic_words(const std::string& input) {
  std::vector<Word> words;
  Word cur;
  auto flush = [&] {
    if (!cur.cps.empty()) {
      words.push_back(std::move(cur));
      cur = {};
    }
  };
  for (const auto& c : text::decode_utf8(input)) {
    if (c.cp == 0 || c.cp == 0xFFFD || text::is_control(c.cp)) continue;
    if (text::is_whitespace(c.cp)) {
      flush();
      continue;
    }
    if (text::is_punctuation(c.cp) || text::is_cjk(c.cp)) {
      flush();
      words.push_back({{c}});
      continue;
    }
    cur.cps.push_back(c);
  }
  flush();
  return words;
}

}  // namespace detail

class WordpieceVocab {
 public:
  // vocab.txt layout: one token per line, line number = id.
  static WordpieceVocab from_file(const std::filesystem::path& path) {
    WordpieceVocab v;
    for (auto& line : io::read_lines(path)) {
      if (line.empty()) continue;
      v.add(line);
    }
    if (v.size() == 0) throw ConfigError("empty vocabulary: " + path.string());
    return v;
  }

  void add(const std::string& token) {
    if (index_.emplace(token, tokens_.size()).second) tokens_.push_back(token);
  }

  std::optional<std::uint64_t> id_of(const std::string& token) const {
    auto it = index_.find(token);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  bool contains(const std::string& token) const {
    return index_.contains(token);
  }

  const std::string& token_of(std::uint64_t id) const { return tokens_.at(id); }
  std::size_t size() const { return tokens_.size(); }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::uint64_t> index_;
};

struct WordpieceOptions {
  std::string unk_token = "[UNK]";
  std::string continuation_prefix = "##";
  std::size_t max_chars_per_word = 100;
};

class WordpieceTokenizer {
 public:
  WordpieceTokenizer(WordpieceVocab vocab, WordpieceOptions opts = {})
      : vocab_(std::move(vocab)), opts_(std::move(opts)) {
    const auto unk = vocab_.id_of(opts_.unk_token);
    if (!unk)
      throw ConfigError("vocabulary lacks unknown token " + opts_.unk_token);
    unk_id_ = *unk;
  }

  const WordpieceVocab& vocab() const { return vocab_; }

  TokenizedText tokenize(const std::string& input) const {
    if (input.empty())
      throw std::invalid_argument("tokenize: empty input text");
    TokenizedText out;
    out.text = input;
    for (const auto& word : detail::basic_words(input)) {
      tokenize_word(input, word, out);
    }
    if (out.tokens.empty())
      throw std::invalid_argument(
          "tokenize: input contains no tokenizable characters");
    return out;
  }

 private:
  void tokenize_word(const std::string& input, const detail::Word& word,
                     TokenizedText& out) const {
    const std::size_t word_begin = word.cps.front().begin;
    const std::size_t word_end = word.cps.back().end;
    if (word.cps.size() > opts_.max_chars_per_word) {
      push(out, opts_.unk_token, unk_id_, word_begin, word_end);
      return;
    }
    std::vector<std::string> pieces;
    std::vector<std::pair<std::size_t, std::size_t>> spans;
    std::size_t start = 0;
    while (start < word.cps.size()) {
      std::size_t end = word.cps.size();
      std::string match;
      while (start < end) {
        std::string candidate =
            start > 0 ? opts_.continuation_prefix : std::string();
        candidate.append(input, word.cps[start].begin,
                         word.cps[end - 1].end - word.cps[start].begin);
        if (vocab_.contains(candidate)) {
          match = std::move(candidate);
          break;
        }
        --end;
      }
      if (match.empty()) {
        // No greedy decomposition: the whole word maps to [UNK].
        push(out, opts_.unk_token, unk_id_, word_begin, word_end);
        return;
      }
      pieces.push_back(match);
      spans.emplace_back(word.cps[start].begin, word.cps[end - 1].end);
      start = end;
    }
    for (std::size_t i = 0; i < pieces.size(); ++i)
      push(out, pieces[i], *vocab_.id_of(pieces[i]), spans[i].first,
           spans[i].second);
  }

  static void push(TokenizedText& out, const std::string& token,
                   std::uint64_t id, std::size_t begin, std::size_t end) {
    out.tokens.push_back(token);
    out.ids.push_back(id);
    out.offsets.emplace_back(begin, end);
  }

  WordpieceVocab vocab_;
  WordpieceOptions opts_;
  std::uint64_t unk_id_;
};

// Deterministic asset-free tokenizer: same basic split as WordPiece, then
// each word is cut into runs of at most `chunk_len` codepoints. Token ids are
// hashes of the token string, so a word tokenizes identically in isolation
// and mid-sentence.
class ChunkTokenizer {
 public:
  explicit ChunkTokenizer(std::size_t chunk_len = 3) : chunk_len_(chunk_len) {}

  TokenizedText tokenize(const std::string& input) const {
    if (input.empty())
      throw std::invalid_argument("tokenize: empty input text");
    TokenizedText out;
    out.text = input;
    for (const auto& word : detail::basic_words(input)) {
      for (std::size_t start = 0; start < word.cps.size();
           start += chunk_len_) {
        const std::size_t end = std::min(start + chunk_len_, word.cps.size());
        std::string token = start > 0 ? "##" : "";
        token.append(input, word.cps[start].begin,
                     word.cps[end - 1].end - word.cps[start].begin);
        out.tokens.push_back(token);
        out.ids.push_back(rng::hash_bytes(token));
        out.offsets.emplace_back(word.cps[start].begin, word.cps[end - 1].end);
      }
    }
    if (out.tokens.empty())
      throw std::invalid_argument(
          "tokenize: input contains no tokenizable characters");
    return out;
  }

 private:
  std::size_t chunk_len_;
};

}  // namespace matterrank::extract
