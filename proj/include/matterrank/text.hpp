#pragma once

// UTF-8 iteration and the character classes used by BERT-style tokenization
// (whitespace, control, punctuation, CJK). Classification covers ASCII plus
// the unicode ranges that actually occur in scientific prose; exotic scripts
// degrade to "word character" rather than failing.

#include <cctype>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace matterrank::text {

struct Codepoint {
  char32_t cp;
  std::size_t begin;  // byte offset into the source
  std::size_t end;    // one past the last byte
};

// Lossy UTF-8 decode: malformed bytes come back as U+FFFD, one byte each.
inline std::vector<Codepoint> decode_utf8(std::string_view s) {
  std::vector<Codepoint> out;
  out.reserve(s.size());
  std::size_t i = 0;
  while (i < s.size()) {
    const unsigned char b0 = static_cast<unsigned char>(s[i]);
    std::size_t len = 1;
    char32_t cp = 0xFFFD;
    if (b0 < 0x80) {
      cp = b0;
    } else if ((b0 >> 5) == 0x6 && i + 1 < s.size()) {
      len = 2;
      cp = static_cast<char32_t>(b0 & 0x1F);
    } else if ((b0 >> 4) == 0xE && i + 2 < s.size()) {
      len = 3;
      cp = static_cast<char32_t>(b0 & 0x0F);
    } else if ((b0 >> 3) == 0x1E && i + 3 < s.size()) {
      len = 4;
      cp = static_cast<char32_t>(b0 & 0x07);
    }
    bool ok = true;
    for (std::size_t k = 1; k < len; ++k) {
      const unsigned char bk = static_cast<unsigned char>(s[i + k]);
      if ((bk >> 6) != 0x2) {
        ok = false;
        break;
      }
      cp = (cp << 6) | static_cast<char32_t>(bk & 0x3F);
    }
    if (!ok || (len > 1 && cp < 0x80)) {
      cp = 0xFFFD;
      len = 1;
    }
    out.push_back({cp, i, i + len});
    i += len;
  }
  return out;
}

inline bool is_whitespace(char32_t c) {
  if (c == U' ' || c == U'\t' || c == U'\n' || c == U'\r') return true;
  if (c == 0x00A0 || c == 0x1680 || c == 0x202F || c == 0x205F || c == 0x3000)
    return true;
  return c >= 0x2000 && c <= 0x200A;
}

inline bool is_control(char32_t c) {
  if (c == U'\t' || c == U'\n' || c == U'\r') return false;
  if (c < 0x20 || c == 0x7F) return true;
  if (c >= 0x80 && c <= 0x9F) return true;
  // Zero-width and directional formatting characters.
  if (c >= 0x200B && c <= 0x200F) return true;
  if (c >= 0x202A && c <= 0x202E) return true;
  return c == 0xFEFF;
}

inline bool is_punctuation(char32_t c) {
  if ((c >= 33 && c <= 47) || (c >= 58 && c <= 64) || (c >= 91 && c <= 96) ||
      (c >= 123 && c <= 126))
    return true;
  switch (c) {
    case 0x00A1:  // inverted exclamation
    case 0x00A7:  // section sign
    case 0x00AB:
    case 0x00B6:
    case 0x00B7:  // middle dot
    case 0x00BB:
    case 0x00BF:
    case 0x3001:  // ideographic comma
    case 0x3002:  // ideographic full stop
    case 0x300C:
    case 0x300D:
      return true;
    default:
      break;
  }
  // General punctuation block (dashes, curly quotes, daggers, ellipsis, ...).
  return (c >= 0x2010 && c <= 0x2027) || (c >= 0x2030 && c <= 0x205E);
}

inline bool is_cjk(char32_t c) {
  return (c >= 0x4E00 && c <= 0x9FFF) || (c >= 0x3400 && c <= 0x4DBF) ||
         (c >= 0xF900 && c <= 0xFAFF) || (c >= 0x20000 && c <= 0x2A6DF) ||
         (c >= 0x2A700 && c <= 0x2CEAF) || (c >= 0x2F800 && c <= 0x2FA1F);
}

// Word characters for the mention-boundary rule. Chemical names touch Greek
// letters and sub/superscript digits, so those count as alphanumeric here.
inline bool is_wordlike(char32_t c) {
  if (c < 0x80) return std::isalnum(static_cast<int>(c)) != 0;
  if (c >= 0x0370 && c <= 0x03FF) return true;                  // Greek
  if (c >= 0x00C0 && c <= 0x024F && c != 0x00D7 && c != 0x00F7) return true;
  if (c >= 0x2070 && c <= 0x2089) return true;                  // super/subscripts
  return false;
}

// First occurrence of `name` in `hay` as a case-sensitive substring whose
// neighbours are not word characters. Returns byte offset or npos.
inline std::size_t find_mention(std::string_view hay, std::string_view name) {
  if (name.empty()) return std::string_view::npos;
  std::size_t from = 0;
  while (true) {
    const std::size_t pos = hay.find(name, from);
    if (pos == std::string_view::npos) return std::string_view::npos;
    bool left_ok = true;
    if (pos > 0) {
      // Walk back to the start of the preceding codepoint.
      std::size_t p = pos;
      do {
        --p;
      } while (p > 0 && (static_cast<unsigned char>(hay[p]) >> 6) == 0x2);
      const auto prev = decode_utf8(hay.substr(p, pos - p));
      if (!prev.empty() && is_wordlike(prev.front().cp)) left_ok = false;
    }
    bool right_ok = true;
    const std::size_t after = pos + name.size();
    if (after < hay.size()) {
      const auto next = decode_utf8(hay.substr(after, 4));
      if (!next.empty() && is_wordlike(next.front().cp)) right_ok = false;
    }
    if (left_ok && right_ok) return pos;
    from = pos + 1;
  }
}

inline bool contains_mention(std::string_view hay, std::string_view name) {
  return find_mention(hay, name) != std::string_view::npos;
}

// Collapse unicode whitespace runs to single spaces and trim the ends.
inline std::string normalize_whitespace(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  bool pending_space = false;
  for (const auto& c : decode_utf8(s)) {
    if (is_whitespace(c.cp)) {
      if (!out.empty()) pending_space = true;
      continue;
    }
    if (pending_space) {
      out.push_back(' ');
      pending_space = false;
    }
    out.append(s.substr(c.begin, c.end - c.begin));
  }
  return out;
}

}  // namespace matterrank::text
