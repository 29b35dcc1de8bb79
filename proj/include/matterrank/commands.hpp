#pragma once

// CLI command implementations: ingest -> rank -> eval/sweep/ablate ->
// finetune. Every command locks its output directory, writes a RunManifest
// before any result file, and derives all randomness from the single config
// seed, so reruns with an equal manifest are byte-identical on the same
// assets.
//
// Exit codes: 0 success, 2 config/input error, 3 model/runtime error,
// 4 evaluation degeneracy.

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <iostream>
#include <memory>

#include "matterrank/analyze.hpp"
#include "matterrank/bert_encoder.hpp"
#include "matterrank/ingest.hpp"
#include "matterrank/run_config.hpp"
#include "matterrank/store.hpp"
#include "matterrank/stub_encoder.hpp"
#include "matterrank/toy_encoder.hpp"
#include "matterrank/train.hpp"

namespace matterrank::cli {

// Exclusive advisory lock on an output directory; concurrent commands must
// target distinct directories. Released on destruction or process death.
class DirectoryLock {
 public:
  explicit DirectoryLock(const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    path_ = dir / ".lock";
    fd_ = ::open(path_.c_str(), O_CREAT | O_RDWR, 0644);
    if (fd_ < 0)
      throw ConfigError("cannot create lock file: " + path_.string());
    if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
      ::close(fd_);
      fd_ = -1;
      throw ConfigError("output directory is in use by another command: " +
                        dir.string());
    }
  }
  ~DirectoryLock() {
    if (fd_ >= 0) {
      ::flock(fd_, LOCK_UN);
      ::close(fd_);
    }
  }
  DirectoryLock(const DirectoryLock&) = delete;
  DirectoryLock& operator=(const DirectoryLock&) = delete;

 private:
  std::filesystem::path path_;
  int fd_ = -1;
};

namespace detail {

inline void hash_input(RunManifest& m, const std::string& label,
                       const std::filesystem::path& path) {
  if (path.empty() || !std::filesystem::exists(path)) return;
  if (std::filesystem::is_directory(path)) {
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::recursive_directory_iterator(path))
      if (e.is_regular_file()) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    std::string combined;
    for (const auto& f : files)
      combined += f.filename().string() + ":" + io::sha256_file_hex(f) + "\n";
    m.input_hashes[label] = io::sha256_hex(combined);
  } else {
    m.input_hashes[label] = io::sha256_file_hex(path);
  }
}

// Manifest goes to disk before any result; a result file without a manifest
// is a broken contract.
inline void write_manifest(const RunConfig& cfg, const std::string& command,
                           const std::vector<std::pair<std::string,
                                                       std::string>>& inputs) {
  RunManifest m;
  m.command = command;
  m.resolved_config = cfg.to_json();
  m.created_utc = io::utc_now_iso8601();
  for (const auto& [label, path] : inputs) hash_input(m, label, path);
  io::write_file(std::filesystem::path(cfg.out_dir) / "manifest.json",
                 m.to_json().dump(2) + "\n");
}

inline bool is_toy_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::is_regular_file(path)) return false;
  std::ifstream in(path, std::ios::binary);
  char magic[8] = {};
  in.read(magic, 8);
  return in.gcount() == 8 && std::string_view(magic, 8) == "MRTOY001";
}

inline std::string format_score(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

// ----------------------------------------------------------- extraction

// Uniform view over the three embedding sources for the rank/sweep/ablate
// pipelines.
struct ExtractionBackend {
  std::unique_ptr<extract::TokenEncoder> token_encoder;  // stub or BERT
  std::unique_ptr<finetune::ToyEncoder> sentence_encoder;
  const extract::EmbeddingProviderConfig* provider = nullptr;
  std::string model_id;
  std::size_t layer_count = 0;  // 0 when layers do not apply

  bool has_layers() const { return token_encoder != nullptr; }
};

inline ExtractionBackend make_backend(const RunConfig& cfg) {
  ExtractionBackend b;
  const std::string kind = cfg.source_kind();
  if (kind == "stub") {
    b.token_encoder = std::make_unique<extract::StubEncoder>();
    b.model_id = "stub-v1";
    b.layer_count = 13;
  } else if (kind == "provider") {
    b.provider = &cfg.provider;
    b.model_id = cfg.provider.model;
  } else if (is_toy_checkpoint(cfg.model_path)) {
    b.sentence_encoder = std::make_unique<finetune::ToyEncoder>(
        finetune::ToyEncoder::load(cfg.model_path));
    b.model_id = "toy:" + std::filesystem::path(cfg.model_path)
                              .filename()
                              .string();
  } else {
    auto enc = std::make_unique<extract::BertEncoder>(
        extract::BertEncoder::load(cfg.model_path));
    b.model_id = enc->model_id();
    b.layer_count = enc->layer_count();
    b.token_encoder = std::move(enc);
  }
  return b;
}

struct ExtractionResult {
  extract::EmbeddingStore store;
  std::map<std::string, std::size_t> token_lengths;
  std::vector<std::string> dropped;
  std::map<std::string, std::string> drop_reasons;
  std::string effective_center_mode;
};

// Store records for the configured layer spec plus (for layer encoders) all
// single(k) records derived from the same forward passes. Combined specs are
// assembled from the per-layer means; sums/averages/concats are linear, so
// this is exact.
inline embedcore::Vector combine_layers(
    const std::vector<embedcore::Vector>& per_layer,
    const extract::LayerSpec& spec) {
  spec.validate(per_layer.size());
  using Mode = extract::LayerSpec::Mode;
  switch (spec.mode) {
    case Mode::kSingle:
      return per_layer[static_cast<std::size_t>(spec.layers[0])];
    case Mode::kSum:
    case Mode::kAverage: {
      embedcore::Vector out(per_layer[0].dim());
      for (int k : spec.layers)
        for (std::size_t u = 0; u < out.dim(); ++u)
          out[u] += per_layer[static_cast<std::size_t>(k)][u];
      if (spec.mode == Mode::kAverage)
        for (auto& x : out.values())
          x /= static_cast<double>(spec.layers.size());
      return out;
    }
    case Mode::kConcat: {
      std::vector<double> out;
      for (int k : spec.layers)
        for (std::size_t u = 0; u < per_layer[0].dim(); ++u)
          out.push_back(per_layer[static_cast<std::size_t>(k)][u]);
      return embedcore::Vector(std::move(out));
    }
  }
  throw std::logic_error("unreachable");
}

inline void put_all_layers(extract::EmbeddingStore& store,
                           const std::string& kind, const std::string& key,
                           const std::vector<embedcore::Vector>& per_layer,
                           const extract::LayerSpec& spec) {
  for (std::size_t k = 0; k < per_layer.size(); ++k)
    store.put(kind, key, "single(" + std::to_string(k) + ")", per_layer[k]);
  if (spec.mode != extract::LayerSpec::Mode::kSingle)
    store.put(kind, key, spec.str(), combine_layers(per_layer, spec));
}

// Embeds every material plus the center word(s) under the configured source
// and context mode, recording token lengths and dropped materials.
inline ExtractionResult run_extraction(
    const RunConfig& cfg, const ExtractionBackend& backend,
    const std::vector<embedcore::MaterialRecord>& materials,
    const ingest::ContextCollection& contexts,
    const extract::WarningSink& warn) {
  ExtractionResult out;
  const bool average = cfg.context_mode == "average";
  if (cfg.context_mode != "free" && cfg.context_mode != "average")
    throw ConfigError("context_mode must be 'free' or 'average', got '" +
                      cfg.context_mode + "'");
  if (backend.provider != nullptr && average)
    throw ConfigError("the remote provider source supports context-free mode "
                      "only");
  const extract::LayerSpec spec = extract::LayerSpec::parse(cfg.layer_spec);
  if (backend.has_layers()) spec.validate(backend.layer_count);

  std::vector<std::string> centers{cfg.center_word};
  for (const auto& w : cfg.center_words)
    if (w != cfg.center_word) centers.push_back(w);

  auto context_set_for = [&](const std::string& key)
      -> const extract::ContextSet* {
    auto it = contexts.contexts.find(key);
    if (it == contexts.contexts.end() || it->second.sentences.empty())
      return nullptr;
    return &it->second;
  };

  auto drop = [&](const std::string& name, const std::string& why) {
    out.dropped.push_back(name);
    out.drop_reasons[name] = why;
    if (warn) warn("dropping material '" + name + "': " + why);
  };

  // --- provider source: one vector per text, no layers.
  if (backend.provider != nullptr) {
    std::size_t dim = 0;
    auto fetch = [&](const std::string& kind, const std::string& text) {
      const auto v = extract::fetch_remote_embedding(text, *backend.provider);
      if (dim == 0)
        dim = v.dim();
      else if (v.dim() != dim)
        throw ModelError("provider returned dimension " +
                         std::to_string(v.dim()) + " for '" + text +
                         "', manifest records " + std::to_string(dim));
      out.store.put(kind, text, "provider", v);
    };
    for (const auto& m : materials) fetch("material", m.name);
    for (const auto& c : centers) fetch("center", c);
    out.store.manifest() = {backend.model_id, dim, "provider", "provider",
                            cfg.seed, io::utc_now_iso8601()};
    out.effective_center_mode = "free";
    return out;
  }

  // --- toy/sentence source: pooled embeddings, no layers.
  if (backend.sentence_encoder != nullptr) {
    const auto& enc = *backend.sentence_encoder;
    auto embed_one = [&](const std::string& kind, const std::string& key) {
      if (average) {
        const auto* cs = context_set_for(key);
        if (cs == nullptr) return false;
        std::vector<embedcore::Vector> sentence_embs;
        for (const auto& s : cs->sentences)
          sentence_embs.push_back(enc.encode(s.sentence));
        out.store.put(kind, key, "pooled",
                      embedcore::mean_vectors(sentence_embs));
      } else {
        out.store.put(kind, key, "pooled", enc.encode(key));
      }
      return true;
    };
    for (const auto& m : materials) {
      out.token_lengths[m.name] = enc.encode_ids(m.name).size();
      if (!embed_one("material", m.name))
        drop(m.name, "no context sentences in the corpus");
    }
    out.effective_center_mode = average ? "average" : "free";
    for (const auto& c : centers) {
      if (!embed_one("center", c)) {
        out.store.put("center", c, "pooled", enc.encode(c));
        if (warn)
          warn("center word '" + c +
               "' has no context sentences; embedded context-free");
        out.effective_center_mode = "free";
      }
    }
    out.store.manifest() = {backend.model_id, enc.config().dim, "pooled",
                            cfg.context_mode, cfg.seed,
                            io::utc_now_iso8601()};
    return out;
  }

  // --- token encoder source (stub or BERT): all layers from one pass.
  const auto& enc = *backend.token_encoder;
  auto embed_free = [&](const std::string& kind, const std::string& key) {
    const auto all = extract::context_free_all_layers(enc, key);
    out.token_lengths[key] = all.token_count;
    put_all_layers(out.store, kind, key, all.per_layer, spec);
  };
  auto embed_average = [&](const std::string& kind, const std::string& key,
                           const extract::ContextSet& cs) {
    extract::ContextSet sampled =
        ingest::sample_contexts(cs, cfg.sample_limit, cfg.seed);
    const auto all = extract::context_average_all_layers(enc, sampled, warn);
    out.token_lengths[key] = enc.tokenize_with_offsets(key).size();
    put_all_layers(out.store, kind, key, all.per_layer, spec);
  };

  for (const auto& m : materials) {
    try {
      if (average) {
        const auto* cs = context_set_for(m.name);
        if (cs == nullptr) {
          drop(m.name, "no context sentences in the corpus");
          continue;
        }
        embed_average("material", m.name, *cs);
      } else {
        embed_free("material", m.name);
      }
    } catch (const extract::NoUsableContextError& e) {
      drop(m.name, e.what());
    } catch (const extract::SequenceTooLongError& e) {
      drop(m.name, e.what());
    }
  }

  out.effective_center_mode = average ? "average" : "free";
  for (const auto& c : centers) {
    const auto* cs = average ? context_set_for(c) : nullptr;
    bool averaged = false;
    if (average && cs != nullptr) {
      try {
        embed_average("center", c, *cs);
        averaged = true;
      } catch (const extract::NoUsableContextError&) {
      }
    }
    if (!averaged) {
      if (average) {
        if (cfg.center_mode == "average")
          throw ConfigError("center word '" + c +
                            "' has no usable context sentences and "
                            "center_mode=average was requested");
        if (warn)
          warn("center word '" + c +
               "' has no usable context sentences; embedded context-free");
        out.effective_center_mode = "free";
      }
      embed_free("center", c);
    }
  }

  out.store.manifest() = {backend.model_id, spec.output_dim(enc.hidden_size()),
                          spec.str(), cfg.context_mode, cfg.seed,
                          io::utc_now_iso8601()};
  return out;
}

inline void write_dropped(const std::filesystem::path& path,
                          const std::vector<std::string>& dropped,
                          const std::map<std::string, std::string>& reasons) {
  io::write_file(
      path, nlohmann::json{{"dropped", dropped}, {"reasons", reasons}}.dump(2) +
                "\n");
}

inline void write_ranking_csv(const embedcore::RankedList& ranked,
                              const std::filesystem::path& path) {
  std::string out = "position,name,score\n";
  for (const auto& e : ranked.entries)
    out += std::to_string(e.position) + "," + e.key + "," +
           format_score(e.score) + "\n";
  io::write_file(path, out);
}

inline embedcore::RankedList read_ranking_csv(
    const std::filesystem::path& path) {
  const auto lines = io::read_lines(path);
  if (lines.empty() || lines[0] != "position,name,score")
    throw ConfigError("ranking file " + path.string() +
                      " lacks the position,name,score header");
  embedcore::RankedList out;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const auto c1 = lines[i].find(',');
    const auto c2 = lines[i].rfind(',');
    if (c1 == std::string::npos || c2 == c1)
      throw ConfigError("ranking file " + path.string() + " line " +
                        std::to_string(i + 1) + " is malformed");
    embedcore::RankedEntry e;
    e.position = std::stoi(lines[i].substr(0, c1));
    e.key = lines[i].substr(c1 + 1, c2 - c1 - 1);
    e.score = std::stod(lines[i].substr(c2 + 1));
    out.entries.push_back(std::move(e));
  }
  if (out.entries.empty())
    throw ConfigError("ranking file " + path.string() + " has no rows");
  return out;
}

inline std::map<std::string, std::size_t> read_token_lengths(
    const std::filesystem::path& path) {
  std::map<std::string, std::size_t> out;
  const auto j = nlohmann::json::parse(io::read_file(path));
  for (const auto& [k, v] : j.items()) out[k] = v.get<std::size_t>();
  return out;
}

inline void write_token_lengths(
    const std::filesystem::path& path,
    const std::map<std::string, std::size_t>& lengths) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [k, v] : lengths) j[k] = v;
  io::write_file(path, j.dump(2) + "\n");
}

}  // namespace detail

// ------------------------------------------------------------------ ingest

inline int cmd_ingest(const RunConfig& cfg) {
  if (cfg.out_dir.empty()) throw ConfigError("ingest needs --out");
  DirectoryLock lock(cfg.out_dir);
  const std::filesystem::path out(cfg.out_dir);

  // Glossary mode: build the material-description pair dataset.
  if (cfg.glossary) {
    ingest::GlossaryApiConfig gcfg;
    if (!cfg.cache_dir.empty())
      gcfg.cache_dir = cfg.cache_dir;
    else if (const char* env = std::getenv("MATTERRANK_CACHE"))
      gcfg.cache_dir = std::filesystem::path(env) / "glossary";
    else
      gcfg.cache_dir = out / "glossary_cache";
    gcfg.offline = cfg.offline;
    gcfg.fetch_descriptions = cfg.fetch_descriptions;
    detail::write_manifest(cfg, "ingest-glossary",
                           {{"glossary_cache", gcfg.cache_dir.string()}});
    std::vector<std::string> warnings;
    const auto entries = ingest::fetch_glossary(gcfg, &warnings);
    for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
    const auto pairs = ingest::build_description_pairs(entries, &warnings);
    ingest::write_pairs_jsonl(out / "pairs.jsonl", pairs);
    std::cout << "glossary entries: " << entries.size()
              << ", pairs written: " << pairs.size() << "\n";
    return 0;
  }

  if (cfg.materials_csv.empty()) throw ConfigError("ingest needs --materials");
  const auto materials = ingest::load_materials_csv(cfg.materials_csv);
  const auto corpus = ingest::load_corpus_dir(cfg.corpus_dir);

  detail::write_manifest(cfg, "ingest",
                         {{"materials_csv", cfg.materials_csv},
                          {"corpus_dir", cfg.corpus_dir}});

  std::vector<std::string> names;
  for (const auto& m : materials) names.push_back(m.name);
  names.push_back(cfg.center_word);
  for (const auto& w : cfg.center_words)
    if (std::find(names.begin(), names.end(), w) == names.end())
      names.push_back(w);

  ingest::ContextCollection collection;
  if (corpus.empty()) {
    std::cerr << "warning: corpus directory has no documents; all materials "
                 "dropped\n";
    collection.dropped = names;
  } else {
    collection = ingest::collect_contexts(corpus, names);
    for (auto& [name, cs] : collection.contexts)
      cs = ingest::sample_contexts(cs, cfg.sample_limit, cfg.seed);
  }

  ingest::write_contexts_jsonl(out / "contexts.jsonl", collection);
  std::map<std::string, std::string> reasons;
  for (const auto& d : collection.dropped)
    reasons[d] = "no sentence in the corpus mentions this name";
  detail::write_dropped(out / "dropped.json", collection.dropped, reasons);

  std::size_t total_sentences = 0;
  for (const auto& [k, cs] : collection.contexts)
    total_sentences += cs.sentences.size();
  std::cout << "materials with contexts: " << collection.contexts.size()
            << ", dropped: " << collection.dropped.size()
            << ", sentences: " << total_sentences << "\n";
  return 0;
}

// -------------------------------------------------------------------- rank

inline int cmd_rank(const RunConfig& cfg) {
  if (cfg.out_dir.empty()) throw ConfigError("rank needs --out");
  if (cfg.materials_csv.empty()) throw ConfigError("rank needs --materials");
  DirectoryLock lock(cfg.out_dir);
  const std::filesystem::path out(cfg.out_dir);

  const auto materials = ingest::load_materials_csv(cfg.materials_csv);
  const auto backend = detail::make_backend(cfg);

  ingest::ContextCollection contexts;
  if (cfg.context_mode == "average") {
    if (cfg.contexts_file.empty())
      throw ConfigError("context-average mode needs --contexts (from ingest)");
    contexts = ingest::load_contexts_jsonl(cfg.contexts_file);
  }

  detail::write_manifest(cfg, "rank",
                         {{"materials_csv", cfg.materials_csv},
                          {"contexts_file", cfg.contexts_file},
                          {"model_path", cfg.model_path}});

  auto warn = [](const std::string& w) { std::cerr << "warning: " << w << "\n"; };
  auto extraction =
      detail::run_extraction(cfg, backend, materials, contexts, warn);

  extraction.store.save(out / "store.jsonl");
  if (!extraction.token_lengths.empty())
    detail::write_token_lengths(out / "token_lengths.json",
                                extraction.token_lengths);
  detail::write_dropped(out / "dropped.json", extraction.dropped,
                        extraction.drop_reasons);

  const std::string ranking_spec =
      backend.has_layers() ? cfg.layer_spec
                           : extraction.store.manifest().layer_spec;
  const auto ranked =
      analyze::rank_from_store(extraction.store, ranking_spec, cfg.center_word);
  detail::write_ranking_csv(ranked, out / "ranking.csv");

  std::cout << "ranked " << ranked.entries.size() << " materials ("
            << extraction.dropped.size() << " dropped); top: "
            << ranked.entries.front().key << "\n";
  return 0;
}

// -------------------------------------------------------------------- eval

inline int cmd_eval(const RunConfig& cfg) {
  if (cfg.out_dir.empty()) throw ConfigError("eval needs --out");
  if (cfg.ranking_file.empty()) throw ConfigError("eval needs --ranking");
  if (cfg.materials_csv.empty()) throw ConfigError("eval needs --materials");
  DirectoryLock lock(cfg.out_dir);
  const std::filesystem::path out(cfg.out_dir);

  const auto ranked = detail::read_ranking_csv(cfg.ranking_file);
  const auto materials = ingest::load_materials_csv(cfg.materials_csv);

  std::map<std::string, std::size_t> lengths;
  std::filesystem::path lengths_path = cfg.token_lengths_file;
  if (lengths_path.empty()) {
    const auto sibling = std::filesystem::path(cfg.ranking_file)
                             .parent_path() /
                         "token_lengths.json";
    if (std::filesystem::exists(sibling)) lengths_path = sibling;
  }
  if (!lengths_path.empty())
    lengths = detail::read_token_lengths(lengths_path);

  detail::write_manifest(cfg, "eval",
                         {{"ranking_file", cfg.ranking_file},
                          {"materials_csv", cfg.materials_csv},
                          {"token_lengths", lengths_path.string()}});

  analyze::AnalysisReport report;
  report.run_id = cfg.run_id;
  report.model_id = "(from ranking)";
  report.context_mode = cfg.context_mode;
  report.layer_spec = cfg.layer_spec;
  report.seed = cfg.seed;
  std::vector<std::string> excluded;
  report.correlation_1 = analyze::correlation_1(ranked, materials, &excluded);
  report.dropped = excluded;
  report.n_materials = ranked.entries.size();
  // Tokenizer-effect correlation is undefined when every name has the same
  // tokenized length; report it as absent rather than failing the run.
  auto try_correlation_2 =
      [&lengths](const embedcore::RankedList& r) -> std::optional<double> {
    if (lengths.empty()) return std::nullopt;
    try {
      return analyze::correlation_2(r, lengths);
    } catch (const std::invalid_argument& e) {
      std::cerr << "warning: correlation_2 unavailable: " << e.what() << "\n";
      return std::nullopt;
    }
  };
  report.correlation_2 = try_correlation_2(ranked);

  std::vector<analyze::AnalysisReport> reports{report};

  if (cfg.has_length_filter) {
    if (lengths.empty())
      throw ConfigError("token-length filter needs token_lengths.json");
    const auto subset = analyze::token_length_filter(materials, lengths,
                                                     cfg.filter_lo,
                                                     cfg.filter_hi);
    std::set<std::string> keep;
    for (const auto& m : subset) keep.insert(m.name);
    embedcore::RankedList filtered;
    for (const auto& e : ranked.entries)
      if (keep.contains(e.key)) {
        auto copy = e;
        copy.position = static_cast<int>(filtered.entries.size() + 1);
        filtered.entries.push_back(copy);
      }
    analyze::AnalysisReport fr = report;
    fr.run_id = cfg.run_id + "_len" + std::to_string(cfg.filter_lo) + "_" +
                std::to_string(cfg.filter_hi);
    fr.correlation_1 = analyze::correlation_1(filtered, subset, &excluded);
    fr.dropped = excluded;
    fr.n_materials = filtered.entries.size();
    fr.correlation_2 = try_correlation_2(filtered);
    reports.push_back(fr);
    std::cout << "length filter [" << cfg.filter_lo << "," << cfg.filter_hi
              << "]: " << filtered.entries.size() << " materials\n";
  }

  analyze::write_report_csv(reports, out / "report.csv");
  for (const auto& r : reports)
    analyze::write_report_json(r, out / ("report_" + r.run_id + ".json"));
  for (const auto& r : reports) {
    std::cout << r.run_id << ": correlation_1 = " << r.correlation_1;
    if (r.correlation_2) std::cout << ", correlation_2 = " << *r.correlation_2;
    std::cout << " (n = " << r.n_materials << ")\n";
  }
  return 0;
}

// ------------------------------------------------------------------- sweep

inline int cmd_sweep(const RunConfig& cfg) {
  if (cfg.out_dir.empty()) throw ConfigError("sweep needs --out");
  if (cfg.materials_csv.empty()) throw ConfigError("sweep needs --materials");
  DirectoryLock lock(cfg.out_dir);
  const std::filesystem::path out(cfg.out_dir);

  const auto materials = ingest::load_materials_csv(cfg.materials_csv);
  const auto backend = detail::make_backend(cfg);
  if (!backend.has_layers())
    throw ConfigError("layer sweeps need a layered token encoder "
                      "(stub or checkpoint source)");

  ingest::ContextCollection contexts;
  if (cfg.context_mode == "average") {
    if (cfg.contexts_file.empty())
      throw ConfigError("context-average mode needs --contexts (from ingest)");
    contexts = ingest::load_contexts_jsonl(cfg.contexts_file);
  }

  detail::write_manifest(cfg, "sweep",
                         {{"materials_csv", cfg.materials_csv},
                          {"contexts_file", cfg.contexts_file},
                          {"model_path", cfg.model_path}});

  auto warn = [](const std::string& w) { std::cerr << "warning: " << w << "\n"; };
  auto extraction =
      detail::run_extraction(cfg, backend, materials, contexts, warn);
  extraction.store.save(out / "store.jsonl");
  detail::write_token_lengths(out / "token_lengths.json",
                              extraction.token_lengths);
  detail::write_dropped(out / "dropped.json", extraction.dropped,
                        extraction.drop_reasons);

  const auto sweep =
      analyze::layer_sweep(extraction.store, cfg.center_word, materials,
                           extraction.token_lengths, backend.layer_count);

  std::vector<analyze::AnalysisReport> rows;
  for (const auto& row : sweep.rows) {
    analyze::AnalysisReport r;
    r.run_id = cfg.run_id;
    r.model_id = backend.model_id;
    r.context_mode = cfg.context_mode;
    r.layer_spec = "single(" + std::to_string(row.layer) + ")";
    r.correlation_1 = row.correlation_1;
    r.correlation_2 = row.correlation_2;
    r.n_materials = materials.size() - extraction.dropped.size();
    r.dropped = extraction.dropped;
    r.seed = cfg.seed;
    rows.push_back(std::move(r));
  }
  analyze::write_report_csv(rows, out / "sweep.csv");
  analyze::write_layer_chart_svg(sweep, cfg.run_id,
                                 out / (cfg.run_id + "_layers.svg"));

  int best = 0;
  for (const auto& row : sweep.rows)
    if (row.correlation_1 > sweep.rows[static_cast<std::size_t>(best)]
                                .correlation_1)
      best = row.layer;
  std::cout << "sweep of " << sweep.rows.size()
            << " layers written; correlation_1 peaks at layer " << best
            << "\n";
  return 0;
}

// ------------------------------------------------------------------ ablate

inline int cmd_ablate(const RunConfig& cfg) {
  if (cfg.out_dir.empty()) throw ConfigError("ablate needs --out");
  if (cfg.materials_csv.empty()) throw ConfigError("ablate needs --materials");
  if (cfg.center_words.empty())
    throw ConfigError("ablate needs at least one --center-words entry");
  DirectoryLock lock(cfg.out_dir);
  const std::filesystem::path out(cfg.out_dir);

  const auto materials = ingest::load_materials_csv(cfg.materials_csv);
  const auto backend = detail::make_backend(cfg);

  ingest::ContextCollection contexts;
  if (cfg.context_mode == "average" && !cfg.contexts_file.empty())
    contexts = ingest::load_contexts_jsonl(cfg.contexts_file);

  detail::write_manifest(cfg, "ablate",
                         {{"materials_csv", cfg.materials_csv},
                          {"contexts_file", cfg.contexts_file},
                          {"model_path", cfg.model_path},
                          {"store_file", cfg.store_file}});

  auto warn = [](const std::string& w) { std::cerr << "warning: " << w << "\n"; };

  // Reuse an existing store when given; only the missing centers are
  // extracted. Otherwise extract everything once.
  extract::EmbeddingStore store;
  std::map<std::string, std::size_t> lengths;
  std::vector<std::string> dropped;
  const std::string ranking_spec = backend.has_layers()
                                       ? cfg.layer_spec
                                       : (backend.provider ? "provider"
                                                           : "pooled");
  if (!cfg.store_file.empty()) {
    store = extract::EmbeddingStore::load(cfg.store_file);
    const auto lengths_file = std::filesystem::path(cfg.store_file)
                                  .parent_path() /
                              "token_lengths.json";
    if (std::filesystem::exists(lengths_file))
      lengths = detail::read_token_lengths(lengths_file);
    // Extract only the centers the store does not already hold.
    std::vector<std::string> missing;
    for (const auto& w : cfg.center_words)
      if (!store.contains("center", w, ranking_spec)) missing.push_back(w);
    if (!store.contains("center", cfg.center_word, ranking_spec))
      missing.push_back(cfg.center_word);
    if (!missing.empty()) {
      RunConfig centers_only = cfg;
      centers_only.center_word = missing.front();
      centers_only.center_words.assign(missing.begin() + 1, missing.end());
      auto extraction = detail::run_extraction(centers_only, backend, {},
                                               contexts, warn);
      for (const auto& r : extraction.store.records())
        store.put(r.kind, r.key, r.layer_spec, r.vector);
    }
  } else {
    auto extraction =
        detail::run_extraction(cfg, backend, materials, contexts, warn);
    store = std::move(extraction.store);
    lengths = std::move(extraction.token_lengths);
    dropped = std::move(extraction.dropped);
  }
  store.save(out / "store.jsonl");

  analyze::AnalysisReport meta;
  meta.run_id = cfg.run_id;
  meta.model_id = backend.model_id;
  meta.context_mode = cfg.context_mode;
  meta.layer_spec = ranking_spec;
  meta.seed = cfg.seed;

  std::vector<std::string> words{cfg.center_word};
  for (const auto& w : cfg.center_words)
    if (w != cfg.center_word) words.push_back(w);
  const auto reports = analyze::center_word_ablation(
      store, words, materials, lengths, ranking_spec, meta);

  analyze::write_report_csv(reports, out / "ablation.csv");
  for (const auto& r : reports) {
    analyze::write_report_json(r, out / ("report_" + r.run_id + ".json"));
    std::cout << r.run_id << ": correlation_1 = " << r.correlation_1 << "\n";
  }
  return 0;
}

// ---------------------------------------------------------------- finetune

inline int cmd_finetune(const RunConfig& cfg) {
  if (cfg.out_dir.empty()) throw ConfigError("finetune needs --out");
  if (!cfg.toy && cfg.base_checkpoint.empty())
    throw ConfigError(
        "desk-scale training runs on the toy encoder: pass --toy (or --base "
        "with a toy checkpoint); full-scale encoder fine-tuning is a "
        "documented runbook, not a CLI path");
  DirectoryLock lock(cfg.out_dir);

  auto schedule = finetune::TrainStep::default_schedule();
  if (!cfg.schedule_config.empty()) {
    const auto j =
        nlohmann::json::parse(io::read_file(cfg.schedule_config));
    const auto& steps = j.at("steps");
    if (!steps.is_array() || steps.size() != 2)
      throw ConfigError("schedule config needs a steps array of size 2");
    schedule[0] = finetune::TrainStep::from_json(steps[0]);
    schedule[1] = finetune::TrainStep::from_json(steps[1]);
  }

  const bool needs_triplets = cfg.step == 0 || cfg.step == 1;
  const bool needs_pairs = cfg.step == 0 || cfg.step == 2;
  std::vector<ingest::TrainingTriplet> triplets;
  std::vector<ingest::TrainingPair> pairs;
  if (needs_triplets) {
    if (cfg.triplets_file.empty())
      throw ConfigError("step 1 needs --triplets");
    triplets = ingest::load_triplets(cfg.triplets_file);
  }
  if (needs_pairs) {
    if (cfg.pairs_file.empty()) throw ConfigError("step 2 needs --pairs");
    pairs = ingest::load_pairs(cfg.pairs_file);
  }

  finetune::ScheduleOptions options;
  options.out_dir = cfg.out_dir;
  options.seed = cfg.seed;
  options.resume = cfg.resume;
  options.step_filter = cfg.step;
  if (!cfg.base_checkpoint.empty()) options.base_weights = cfg.base_checkpoint;
  if (!cfg.sts_file.empty())
    options.validation = finetune::load_sts_jsonl(cfg.sts_file);

  detail::write_manifest(cfg, "finetune",
                         {{"triplets", cfg.triplets_file},
                          {"pairs", cfg.pairs_file},
                          {"sts", cfg.sts_file},
                          {"schedule", cfg.schedule_config},
                          {"base", cfg.base_checkpoint}});

  finetune::ToyEncoderConfig toy_cfg;
  toy_cfg.init_seed = cfg.seed;
  finetune::ToyEncoder encoder(toy_cfg);
  if (!cfg.base_checkpoint.empty() && cfg.step != 2)
    encoder = finetune::ToyEncoder::load(cfg.base_checkpoint);

  const auto result = finetune::run_two_step_schedule(encoder, triplets, pairs,
                                                      schedule, options);
  std::cout << "checkpoints: " << result.epoch_checkpoints.size();
  if (!result.selected_step1.empty())
    std::cout << ", step-1 selection: epoch " << result.selected_epoch_step1;
  std::cout << ", final: " << result.final_checkpoint.filename().string()
            << "\n";
  return 0;
}

// --------------------------------------------------------------- dispatch

inline int run_command(const std::string& command, const RunConfig& cfg) {
  try {
    if (command == "ingest") return cmd_ingest(cfg);
    if (command == "rank") return cmd_rank(cfg);
    if (command == "eval") return cmd_eval(cfg);
    if (command == "sweep") return cmd_sweep(cfg);
    if (command == "ablate") return cmd_ablate(cfg);
    if (command == "finetune") return cmd_finetune(cfg);
    std::cerr << "error: unknown command " << command << "\n";
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const EvalError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}

}  // namespace matterrank::cli
