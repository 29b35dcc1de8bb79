#pragma once

// Dataset construction from raw corpus documents and public glossaries:
// sentence splitting, per-material context collection and sampling,
// material-description similarity pairs, and NLI/QQP-style triplet loading.

#include <algorithm>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "matterrank/httplib_compat.hpp"
#include <nlohmann/json.hpp>

#include "matterrank/errors.hpp"
#include "matterrank/extract.hpp"
#include "matterrank/io_util.hpp"
#include "matterrank/remote.hpp"
#include "matterrank/rng.hpp"
#include "matterrank/text.hpp"

namespace matterrank::ingest {

struct CorpusDocument {
  std::string doc_id;
  std::string text;
  std::string publisher;
  int year = 0;
};

struct GlossaryEntry {
  std::string formula;
  std::string synonym;
  std::string description;

  int present_fields() const {
    return (formula.empty() ? 0 : 1) + (synonym.empty() ? 0 : 1) +
           (description.empty() ? 0 : 1);
  }
};

struct TrainingPair {
  std::string anchor;
  std::string positive;

  friend bool operator==(const TrainingPair&, const TrainingPair&) = default;
};

struct TrainingTriplet {
  std::string anchor;
  std::string positive;
  std::string negative;

  friend bool operator==(const TrainingTriplet&,
                         const TrainingTriplet&) = default;
};

// ---------------------------------------------------------------- sentences

namespace detail {

// Abbreviations that end with a period but do not end a sentence. Matched
// case-insensitively against the word immediately before the period.
inline const std::set<std::string>& abbreviations() {
  static const std::set<std::string> abbr = {
      "al",  "fig", "figs", "eq",  "eqs",  "ref", "refs", "e.g", "i.e",
      "vs",  "etc", "ca",   "cf",  "resp", "dr",  "prof", "no",  "nos",
      "approx", "abbr", "sec", "chap", "vol", "st", "mt"};
  return abbr;
}

inline bool is_open_or_upper(char32_t c) {
  if (c < 0x80)
    return (std::isupper(static_cast<int>(c)) != 0) ||
           (std::isdigit(static_cast<int>(c)) != 0) || c == U'(' || c == U'[' ||
           c == U'"';
  return c == 0x201C || c == 0x2018;  // opening curly quotes
}

// Word (letters/periods) ending right before byte position `pos`.
inline std::string word_before(std::string_view s, std::size_t pos) {
  std::size_t b = pos;
  while (b > 0) {
    const char c = s[b - 1];
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '.')
      --b;
    else
      break;
  }
  std::string w(s.substr(b, pos - b));
  std::transform(w.begin(), w.end(), w.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  while (!w.empty() && w.front() == '.') w.erase(w.begin());
  return w;
}

}  // namespace detail

// Rule-based sentence splitter: terminators are . ! ? followed by whitespace
// and an uppercase/digit/opening start, with guards for decimal points and a
// curated abbreviation list. Paragraph breaks always split. Degenerate text
// yields a single sentence.
inline std::vector<std::string> split_sentences(const std::string& txt) {
  std::vector<std::string> sentences;
  const auto cps = text::decode_utf8(txt);
  std::size_t sentence_begin = 0;

  auto emit = [&](std::size_t end_byte) {
    std::string_view raw =
        std::string_view(txt).substr(sentence_begin, end_byte - sentence_begin);
    // Trim whitespace at both ends but keep the substring property.
    std::size_t lo = 0, hi = raw.size();
    while (lo < hi && std::isspace(static_cast<unsigned char>(raw[lo]))) ++lo;
    while (hi > lo && std::isspace(static_cast<unsigned char>(raw[hi - 1])))
      --hi;
    if (hi > lo) sentences.emplace_back(raw.substr(lo, hi - lo));
    sentence_begin = end_byte;
  };

  for (std::size_t i = 0; i < cps.size(); ++i) {
    const char32_t c = cps[i].cp;
    // Blank line = paragraph boundary.
    if (c == U'\n') {
      std::size_t j = i + 1;
      while (j < cps.size() &&
             (cps[j].cp == U' ' || cps[j].cp == U'\t' || cps[j].cp == U'\r'))
        ++j;
      if (j < cps.size() && cps[j].cp == U'\n') {
        emit(cps[i].begin);
        continue;
      }
    }
    if (c != U'.' && c != U'!' && c != U'?') continue;

    if (c == U'.') {
      const bool prev_digit =
          i > 0 && cps[i - 1].cp < 0x80 &&
          std::isdigit(static_cast<int>(cps[i - 1].cp)) != 0;
      const bool next_digit =
          i + 1 < cps.size() && cps[i + 1].cp < 0x80 &&
          std::isdigit(static_cast<int>(cps[i + 1].cp)) != 0;
      if (prev_digit && next_digit) continue;  // decimal point
      const std::string w = detail::word_before(txt, cps[i].begin);
      if (detail::abbreviations().contains(w)) continue;
    }

    // Absorb closing quotes/brackets after the terminator.
    std::size_t end = i;
    while (end + 1 < cps.size() &&
           (cps[end + 1].cp == U')' || cps[end + 1].cp == U']' ||
            cps[end + 1].cp == U'"' || cps[end + 1].cp == 0x201D ||
            cps[end + 1].cp == 0x2019))
      ++end;

    // Must be followed by whitespace + sentence-ish start, or end of text.
    std::size_t next = end + 1;
    bool saw_space = false;
    while (next < cps.size() && text::is_whitespace(cps[next].cp)) {
      saw_space = true;
      ++next;
    }
    if (next >= cps.size()) {
      emit(cps[end].end);
      i = end;
      continue;
    }
    if (saw_space && detail::is_open_or_upper(cps[next].cp)) {
      emit(cps[end].end);
      i = end;
    }
  }
  emit(txt.size());
  if (sentences.empty()) {
    const std::string whole = text::normalize_whitespace(txt);
    if (!whole.empty()) sentences.push_back(whole);
  }
  return sentences;
}

inline std::vector<std::string> split_sentences(const CorpusDocument& doc) {
  if (doc.text.empty())
    throw std::invalid_argument("split_sentences: empty document " + doc.doc_id);
  return split_sentences(doc.text);
}

// ----------------------------------------------------------------- contexts

struct ContextCollection {
  std::map<std::string, extract::ContextSet> contexts;
  std::vector<std::string> dropped;  // names with zero usable sentences
};

// Every returned sentence contains its material under the extraction
// matching rule. Duplicates (exact match after whitespace normalization) are
// kept once, first occurrence wins.
inline ContextCollection collect_contexts(std::span<const CorpusDocument> corpus,
                                          std::span<const std::string> names) {
  if (corpus.empty()) throw std::invalid_argument("collect_contexts: no corpus");
  if (names.empty()) throw std::invalid_argument("collect_contexts: no names");
  ContextCollection out;
  std::map<std::string, std::set<std::string>> seen;  // name -> normalized set
  for (const auto& name : names)
    out.contexts.emplace(name, extract::ContextSet{name, {}});
  for (const auto& doc : corpus) {
    for (const auto& sentence : split_sentences(doc.text)) {
      for (const auto& name : names) {
        if (!text::contains_mention(sentence, name)) continue;
        const std::string norm = text::normalize_whitespace(sentence);
        if (!seen[name].insert(norm).second) continue;
        out.contexts.at(name).sentences.push_back({sentence, doc.doc_id});
      }
    }
  }
  for (auto it = out.contexts.begin(); it != out.contexts.end();) {
    if (it->second.sentences.empty()) {
      out.dropped.push_back(it->first);
      it = out.contexts.erase(it);
    } else {
      ++it;
    }
  }
  return out;
}

// Uniform sample without replacement of at most `limit` sentences,
// deterministic in (sentence multiset, limit, seed): sentences are sorted
// canonically before the seeded draw, so shard order cannot change results.
inline extract::ContextSet sample_contexts(const extract::ContextSet& cs,
                                           std::size_t limit,
                                           std::uint64_t seed) {
  if (limit < 1) throw std::invalid_argument("sample_contexts: limit must be >= 1");
  if (cs.sentences.size() <= limit) return cs;
  extract::ContextSet sorted = cs;
  std::sort(sorted.sentences.begin(), sorted.sentences.end(),
            [](const extract::ContextSentence& a,
               const extract::ContextSentence& b) {
              if (a.sentence != b.sentence) return a.sentence < b.sentence;
              return a.doc_id < b.doc_id;
            });
  const auto chosen = rng::sample_indices(
      sorted.sentences.size(), limit,
      rng::mix(seed, rng::hash_bytes(cs.material_key)));
  extract::ContextSet out{cs.material_key, {}};
  out.sentences.reserve(limit);
  for (const std::size_t i : chosen) out.sentences.push_back(sorted.sentences[i]);
  return out;
}

// -------------------------------------------------------------------- pairs

// Per glossary entry, one pair for every two present fields:
// formula-synonym, formula-description, synonym-description.
inline std::vector<TrainingPair> build_description_pairs(
    std::span<const GlossaryEntry> entries,
    std::vector<std::string>* warnings = nullptr) {
  if (entries.empty())
    throw std::invalid_argument("build_description_pairs: no entries");
  std::vector<TrainingPair> pairs;
  for (const auto& e : entries) {
    if (e.present_fields() < 2) {
      if (warnings)
        warnings->push_back("glossary entry '" + e.formula +
                            "' has fewer than two fields, skipped");
      continue;
    }
    auto add = [&](const std::string& a, const std::string& b) {
      if (!a.empty() && !b.empty() && a != b) pairs.push_back({a, b});
    };
    add(e.formula, e.synonym);
    add(e.formula, e.description);
    add(e.synonym, e.description);
  }
  return pairs;
}

// ----------------------------------------------------------------- triplets

// JSONL with anchor/positive/negative per line. Malformed lines are counted
// and skipped; more than 1% malformed means the dataset itself is broken.
inline std::vector<TrainingTriplet> load_triplets(
    const std::filesystem::path& path, std::size_t* malformed_out = nullptr) {
  const auto lines = io::read_lines(path);
  std::vector<TrainingTriplet> out;
  std::size_t malformed = 0, total = 0;
  for (const auto& line : lines) {
    if (line.empty()) continue;
    ++total;
    try {
      const auto j = nlohmann::json::parse(line);
      TrainingTriplet t{j.at("anchor").get<std::string>(),
                        j.at("positive").get<std::string>(),
                        j.at("negative").get<std::string>()};
      if (t.anchor.empty() || t.positive.empty() || t.negative.empty() ||
          t.positive == t.negative)
        throw ConfigError("invariant violation");
      out.push_back(std::move(t));
    } catch (const std::exception&) {
      ++malformed;
    }
  }
  if (malformed_out != nullptr) *malformed_out = malformed;
  if (total > 0 &&
      static_cast<double>(malformed) > 0.01 * static_cast<double>(total))
    throw ConfigError("triplet dataset " + path.string() + " is corrupt: " +
                      std::to_string(malformed) + "/" + std::to_string(total) +
                      " malformed lines");
  return out;
}

inline std::vector<TrainingPair> load_pairs(const std::filesystem::path& path,
                                            std::size_t* malformed_out = nullptr) {
  const auto lines = io::read_lines(path);
  std::vector<TrainingPair> out;
  std::size_t malformed = 0, total = 0;
  for (const auto& line : lines) {
    if (line.empty()) continue;
    ++total;
    try {
      const auto j = nlohmann::json::parse(line);
      TrainingPair p{j.at("anchor").get<std::string>(),
                     j.at("positive").get<std::string>()};
      if (p.anchor.empty() || p.positive.empty() || p.anchor == p.positive)
        throw ConfigError("invariant violation");
      out.push_back(std::move(p));
    } catch (const std::exception&) {
      ++malformed;
    }
  }
  if (malformed_out != nullptr) *malformed_out = malformed;
  if (total > 0 &&
      static_cast<double>(malformed) > 0.01 * static_cast<double>(total))
    throw ConfigError("pair dataset " + path.string() + " is corrupt");
  return out;
}

// ------------------------------------------------------------ file formats

inline void write_pairs_jsonl(const std::filesystem::path& path,
                              std::span<const TrainingPair> pairs) {
  std::string out;
  for (const auto& p : pairs) {
    out += nlohmann::json{{"anchor", p.anchor}, {"positive", p.positive}}.dump();
    out += '\n';
  }
  io::write_file(path, out);
}

inline void write_triplets_jsonl(const std::filesystem::path& path,
                                 std::span<const TrainingTriplet> triplets) {
  std::string out;
  for (const auto& t : triplets) {
    out += nlohmann::json{{"anchor", t.anchor},
                          {"positive", t.positive},
                          {"negative", t.negative}}
               .dump();
    out += '\n';
  }
  io::write_file(path, out);
}

// Context file: one {"material", "sentence", "doc_id"} object per line.
inline void write_contexts_jsonl(const std::filesystem::path& path,
                                 const ContextCollection& collection) {
  std::string out;
  for (const auto& [name, cs] : collection.contexts) {
    for (const auto& s : cs.sentences) {
      out += nlohmann::json{{"material", name},
                            {"sentence", s.sentence},
                            {"doc_id", s.doc_id}}
                 .dump();
      out += '\n';
    }
  }
  io::write_file(path, out);
}

inline ContextCollection load_contexts_jsonl(const std::filesystem::path& path) {
  ContextCollection out;
  for (const auto& line : io::read_lines(path)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    const std::string name = j.at("material").get<std::string>();
    auto [it, inserted] =
        out.contexts.emplace(name, extract::ContextSet{name, {}});
    it->second.sentences.push_back({j.at("sentence").get<std::string>(),
                                    j.at("doc_id").get<std::string>()});
  }
  return out;
}

// Materials list: CSV `name,formula,experimental_value` with a header row.
// Gold ranks are derived (rank 1 = highest value), never stored.
inline std::vector<embedcore::MaterialRecord> load_materials_csv(
    const std::filesystem::path& path) {
  const auto lines = io::read_lines(path);
  if (lines.empty()) throw ConfigError("materials CSV is empty: " + path.string());
  if (text::normalize_whitespace(lines[0]) != "name,formula,experimental_value")
    throw ConfigError("materials CSV " + path.string() +
                      " line 1: expected header name,formula,experimental_value");
  std::vector<embedcore::MaterialRecord> out;
  std::set<std::string> names;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const std::string where =
        path.string() + " line " + std::to_string(i + 1);
    std::vector<std::string> cells;
    std::string cell;
    for (char c : lines[i]) {
      if (c == ',') {
        cells.push_back(cell);
        cell.clear();
      } else {
        cell.push_back(c);
      }
    }
    cells.push_back(cell);
    if (cells.size() != 3)
      throw ConfigError(where + ": expected 3 columns, got " +
                        std::to_string(cells.size()));
    embedcore::MaterialRecord r;
    r.name = text::normalize_whitespace(cells[0]);
    r.formula = text::normalize_whitespace(cells[1]);
    if (r.name.empty()) throw ConfigError(where + ": empty name");
    if (!names.insert(r.name).second)
      throw ConfigError(where + ": duplicate material " + r.name);
    try {
      std::size_t used = 0;
      r.experimental_value = std::stod(cells[2], &used);
      if (used != cells[2].size()) throw std::invalid_argument(cells[2]);
    } catch (const std::exception&) {
      throw ConfigError(where + ": bad experimental value '" + cells[2] + "'");
    }
    if (r.experimental_value < 0 || !std::isfinite(r.experimental_value))
      throw ConfigError(where + ": experimental value must be finite and >= 0");
    out.push_back(std::move(r));
  }
  if (out.empty()) throw ConfigError("materials CSV has no rows: " + path.string());
  embedcore::derive_gold_ranks(out);
  return out;
}

// ----------------------------------------------------------------- glossary

struct GlossaryApiConfig {
  std::string api_endpoint = "https://en.wikipedia.org/w/api.php";
  std::vector<std::string> pages = {"Glossary of chemical formulae",
                                    "List of inorganic compounds"};
  std::filesystem::path cache_dir;
  bool offline = false;
  bool fetch_descriptions = false;
  double timeout_seconds = 30.0;
  int max_retries = 2;
};

namespace detail {

inline std::string cache_slug(const std::string& title) {
  std::string out;
  for (unsigned char c : title)
    out.push_back(std::isalnum(c) ? static_cast<char>(std::tolower(c)) : '_');
  return out;
}

inline std::string strip_wiki_markup(std::string s) {
  // [[target|label]] -> label, [[target]] -> target
  std::string out;
  std::size_t i = 0;
  while (i < s.size()) {
    if (s.compare(i, 2, "[[") == 0) {
      const auto close = s.find("]]", i + 2);
      if (close == std::string::npos) break;
      std::string inner = s.substr(i + 2, close - i - 2);
      const auto bar = inner.rfind('|');
      out += bar == std::string::npos ? inner : inner.substr(bar + 1);
      i = close + 2;
      continue;
    }
    if (s.compare(i, 3, "'''") == 0) {
      i += 3;
      continue;
    }
    if (s.compare(i, 2, "''") == 0) {
      i += 2;
      continue;
    }
    // Drop templates and refs wholesale.
    if (s.compare(i, 2, "{{") == 0) {
      const auto close = s.find("}}", i + 2);
      if (close == std::string::npos) break;
      i = close + 2;
      continue;
    }
    if (s.compare(i, 5, "<ref>") == 0 || s.compare(i, 4, "<ref") == 0) {
      auto close = s.find("</ref>", i);
      if (close == std::string::npos) {
        close = s.find("/>", i);
        if (close == std::string::npos) break;
        i = close + 2;
      } else {
        i = close + 6;
      }
      continue;
    }
    out.push_back(s[i++]);
  }
  return text::normalize_whitespace(out);
}

// Rows of the first wikitable(s): first cell = formula, second = synonym.
inline std::vector<GlossaryEntry> parse_glossary_wikitext(
    const std::string& wikitext, std::vector<std::string>* warnings) {
  std::vector<GlossaryEntry> entries;
  std::vector<std::string> row;
  auto flush_row = [&] {
    if (row.size() >= 2) {
      GlossaryEntry e;
      e.formula = strip_wiki_markup(row[0]);
      e.synonym = strip_wiki_markup(row[1]);
      if (!e.formula.empty() && !e.synonym.empty()) {
        entries.push_back(std::move(e));
      } else if (warnings) {
        warnings->push_back("skipping malformed glossary row: " + row[0]);
      }
    }
    row.clear();
  };
  std::istringstream in(wikitext);
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind("|-", 0) == 0 || line.rfind("|}", 0) == 0) {
      flush_row();
      continue;
    }
    if (line.rfind("!", 0) == 0) continue;  // header cells
    if (line.rfind("|", 0) != 0) continue;
    std::string payload = line.substr(1);
    std::size_t start = 0, bar;
    while ((bar = payload.find("||", start)) != std::string::npos) {
      row.push_back(payload.substr(start, bar - start));
      start = bar + 2;
    }
    row.push_back(payload.substr(start));
  }
  flush_row();
  return entries;
}

inline std::string http_get_cached(const GlossaryApiConfig& cfg,
                                   const std::string& cache_name,
                                   const std::string& path_and_query) {
  const auto cache_file = cfg.cache_dir / (cache_name + ".json");
  if (std::filesystem::exists(cache_file)) return io::read_file(cache_file);
  if (cfg.offline)
    throw ConfigError("offline mode and no cached response for " + cache_name +
                      " (expected " + cache_file.string() + ")");
  const auto url = matterrank::extract::detail::split_url(cfg.api_endpoint);
  httplib::Client client(url.base);
  const auto timeout = std::chrono::milliseconds(
      static_cast<long long>(cfg.timeout_seconds * 1000.0));
  client.set_connection_timeout(timeout);
  client.set_read_timeout(timeout);
  std::string last_error;
  for (int attempt = 0; attempt <= cfg.max_retries; ++attempt) {
    if (attempt > 0)
      std::this_thread::sleep_for(std::chrono::milliseconds(100 * attempt));
    auto res = client.Get(path_and_query);
    if (!res) {
      last_error = "transport error (" + httplib::to_string(res.error()) + ")";
      continue;
    }
    if (res->status != 200) {
      last_error = "HTTP " + std::to_string(res->status);
      continue;
    }
    std::filesystem::create_directories(cfg.cache_dir);
    io::write_file(cache_file, res->body);
    return res->body;
  }
  throw ModelError("glossary fetch failed for " + cache_name + ": " +
                   last_error);
}

inline std::string url_encode(const std::string& s) {
  static const char* hex = "0123456789ABCDEF";
  std::string out;
  for (unsigned char c : s) {
    if (std::isalnum(c) || c == '-' || c == '_' || c == '.' || c == '~') {
      out.push_back(static_cast<char>(c));
    } else if (c == ' ') {
      out.push_back('+');
    } else {
      out.push_back('%');
      out.push_back(hex[c >> 4]);
      out.push_back(hex[c & 0xF]);
    }
  }
  return out;
}

}  // namespace detail

// Entries from the configured glossary pages. Raw API responses are cached on
// disk under cfg.cache_dir so reruns are offline; cfg.offline forbids any
// network use (warm cache required).
inline std::vector<GlossaryEntry> fetch_glossary(
    const GlossaryApiConfig& cfg, std::vector<std::string>* warnings = nullptr) {
  if (cfg.cache_dir.empty())
    throw ConfigError("glossary cache directory not configured");
  std::vector<GlossaryEntry> all;
  for (const auto& page : cfg.pages) {
    const std::string body = detail::http_get_cached(
        cfg, detail::cache_slug(page),
        "/w/api.php?action=parse&prop=wikitext&format=json&redirects=1&page=" +
            detail::url_encode(page));
    std::string wikitext;
    try {
      const auto j = nlohmann::json::parse(body);
      const auto& w = j.at("parse").at("wikitext");
      wikitext = w.is_string() ? w.get<std::string>()
                               : w.at("*").get<std::string>();
    } catch (const std::exception& e) {
      if (warnings)
        warnings->push_back("cannot parse API response for '" + page +
                            "': " + e.what());
      continue;
    }
    auto entries = detail::parse_glossary_wikitext(wikitext, warnings);
    if (entries.empty() && warnings)
      warnings->push_back("glossary page '" + page + "' yielded no entries");
    if (cfg.fetch_descriptions) {
      for (auto& e : entries) {
        const std::string& title = e.synonym.empty() ? e.formula : e.synonym;
        try {
          const std::string ex = detail::http_get_cached(
              cfg, "extract_" + detail::cache_slug(title),
              "/w/api.php?action=query&prop=extracts&exintro=1&explaintext=1&"
              "format=json&titles=" +
                  detail::url_encode(title));
          const auto j = nlohmann::json::parse(ex);
          for (const auto& [id, p] : j.at("query").at("pages").items()) {
            if (p.contains("extract"))
              e.description = text::normalize_whitespace(
                  p.at("extract").get<std::string>());
          }
        } catch (const std::exception& ex_err) {
          if (warnings)
            warnings->push_back("no description for '" + title +
                                "': " + ex_err.what());
        }
      }
    }
    all.insert(all.end(), entries.begin(), entries.end());
  }
  return all;
}

// Plain-text corpus directory: every *.txt file becomes one document with the
// filename stem as doc_id.
inline std::vector<CorpusDocument> load_corpus_dir(
    const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir))
    throw ConfigError("corpus directory not readable: " + dir.string());
  std::vector<CorpusDocument> docs;
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".txt")
      files.push_back(e.path());
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    CorpusDocument d;
    d.doc_id = f.stem().string();
    d.text = io::read_file(f);
    if (!d.text.empty()) docs.push_back(std::move(d));
  }
  return docs;
}

}  // namespace matterrank::ingest
