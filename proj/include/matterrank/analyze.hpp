#pragma once

// Evaluation harness: Correlation_1 (predicted vs experimental rank),
// Correlation_2 (predicted rank vs tokenized length — the tokenizer effect),
// layer sweeps, center-word ablations, token-length filtering, and report
// emission. Everything here reads embeddings from a store; analysis never
// triggers model inference.

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "matterrank/embedcore.hpp"
#include "matterrank/errors.hpp"
#include "matterrank/io_util.hpp"
#include "matterrank/store.hpp"

namespace matterrank::analyze {

// Published reference constants, shown alongside reports, never asserted:
// the DFT power-factor baseline and the prior static-embedding result.
inline constexpr double kDftBaselineCorrelation = 0.31;
inline constexpr double kStaticEmbeddingReference = 0.52;

struct AnalysisReport {
  std::string run_id;
  std::string model_id;
  std::string context_mode;  // "free" | "average" | "provider"
  std::string layer_spec;
  double correlation_1 = 0.0;
  std::optional<double> correlation_2;
  std::size_t n_materials = 0;
  std::vector<std::string> dropped;
  std::uint64_t seed = 0;

  friend bool operator==(const AnalysisReport&,
                         const AnalysisReport&) = default;

  nlohmann::json to_json() const {
    nlohmann::json j{{"run_id", run_id},
                     {"model_id", model_id},
                     {"context_mode", context_mode},
                     {"layer_spec", layer_spec},
                     {"correlation_1", correlation_1},
                     {"n_materials", n_materials},
                     {"dropped", dropped},
                     {"seed", seed},
                     {"references",
                      {{"dft_baseline", kDftBaselineCorrelation},
                       {"static_embedding", kStaticEmbeddingReference}}}};
    if (correlation_2) j["correlation_2"] = *correlation_2;
    return j;
  }

  static AnalysisReport from_json(const nlohmann::json& j) {
    AnalysisReport r;
    r.run_id = j.at("run_id").get<std::string>();
    r.model_id = j.at("model_id").get<std::string>();
    r.context_mode = j.at("context_mode").get<std::string>();
    r.layer_spec = j.at("layer_spec").get<std::string>();
    r.correlation_1 = j.at("correlation_1").get<double>();
    if (j.contains("correlation_2"))
      r.correlation_2 = j.at("correlation_2").get<double>();
    r.n_materials = j.at("n_materials").get<std::size_t>();
    r.dropped = j.at("dropped").get<std::vector<std::string>>();
    r.seed = j.at("seed").get<std::uint64_t>();
    return r;
  }
};

// Spearman between predicted positions and gold ranks over the intersection
// of predicted keys and known materials. Materials absent from the
// prediction are excluded and reported via `excluded`.
inline double correlation_1(const embedcore::RankedList& predicted,
                            std::span<const embedcore::MaterialRecord> materials,
                            std::vector<std::string>* excluded = nullptr) {
  std::map<std::string, int> gold;
  for (const auto& m : materials) gold.emplace(m.name, m.gold_rank);
  std::vector<double> pred_positions, gold_ranks;
  std::map<std::string, bool> seen;
  for (const auto& e : predicted.entries) {
    auto it = gold.find(e.key);
    if (it == gold.end()) continue;
    seen[e.key] = true;
    pred_positions.push_back(static_cast<double>(e.position));
    gold_ranks.push_back(static_cast<double>(it->second));
  }
  if (excluded != nullptr) {
    excluded->clear();
    for (const auto& m : materials)
      if (!seen.contains(m.name)) excluded->push_back(m.name);
  }
  if (pred_positions.size() < 2)
    throw EvalError("correlation_1: overlap between prediction and materials "
                    "is " +
                    std::to_string(pred_positions.size()) +
                    ", need at least 2");
  return embedcore::spearman(pred_positions, gold_ranks, "correlation_1").rho;
}

// Spearman between predicted positions (1 = most similar) and tokenized name
// lengths. Positive values mean shorter-tokenized names rank higher.
inline double correlation_2(
    const embedcore::RankedList& predicted,
    const std::map<std::string, std::size_t>& token_lengths) {
  std::string missing;
  std::vector<double> positions, lengths;
  for (const auto& e : predicted.entries) {
    auto it = token_lengths.find(e.key);
    if (it == token_lengths.end()) {
      missing += missing.empty() ? e.key : ", " + e.key;
      continue;
    }
    positions.push_back(static_cast<double>(e.position));
    lengths.push_back(static_cast<double>(it->second));
  }
  if (!missing.empty())
    throw ConfigError("correlation_2: token lengths missing for: " + missing);
  if (positions.size() < 2)
    throw EvalError("correlation_2: need at least 2 ranked materials");
  return embedcore::spearman(positions, lengths, "correlation_2").rho;
}

// Materials whose tokenized length falls within [lo, hi].
inline std::vector<embedcore::MaterialRecord> token_length_filter(
    std::span<const embedcore::MaterialRecord> materials,
    const std::map<std::string, std::size_t>& token_lengths, std::size_t lo,
    std::size_t hi) {
  if (lo > hi)
    throw std::invalid_argument("token_length_filter: lo must be <= hi");
  std::vector<embedcore::MaterialRecord> out;
  for (const auto& m : materials) {
    auto it = token_lengths.find(m.name);
    if (it == token_lengths.end()) continue;
    if (it->second >= lo && it->second <= hi) out.push_back(m);
  }
  if (out.empty())
    throw EvalError("token_length_filter: no materials in range [" +
                    std::to_string(lo) + ", " + std::to_string(hi) + "]");
  return out;
}

// Ranking straight out of the embedding store (counted lookups).
inline embedcore::RankedList rank_from_store(
    const extract::EmbeddingStore& store, const std::string& layer_spec,
    const std::string& center_key) {
  const auto* center = store.find("center", center_key, layer_spec);
  if (center == nullptr)
    throw ConfigError("store has no center embedding for '" + center_key +
                      "' at " + layer_spec +
                      "; run the rank command with this center word first");
  std::map<std::string, embedcore::Vector> items;
  for (const auto& r : store.records())
    if (r.kind == "material" && r.layer_spec == layer_spec)
      items.emplace(r.key, *store.find("material", r.key, r.layer_spec));
  if (items.empty())
    throw ConfigError("store has no material embeddings at " + layer_spec);
  return embedcore::rank_by_similarity(*center, items);
}

struct LayerSweepRow {
  int layer = 0;
  double correlation_1 = 0.0;
  std::optional<double> correlation_2;
};

struct LayerSweepResult {
  std::vector<LayerSweepRow> rows;  // one per layer, index == layer
};

// One (c1, c2) pair per layer from a store populated with single(k) records
// for every k. The extraction side fills the store from one shared forward
// pass per sentence; this function only reads it back.
inline LayerSweepResult layer_sweep(
    const extract::EmbeddingStore& store, const std::string& center_key,
    std::span<const embedcore::MaterialRecord> materials,
    const std::map<std::string, std::size_t>& token_lengths,
    std::size_t layer_count = 13) {
  LayerSweepResult out;
  for (std::size_t k = 0; k < layer_count; ++k) {
    const std::string spec = "single(" + std::to_string(k) + ")";
    const auto ranked = rank_from_store(store, spec, center_key);
    LayerSweepRow row;
    row.layer = static_cast<int>(k);
    row.correlation_1 = correlation_1(ranked, materials);
    if (!token_lengths.empty()) {
      try {
        row.correlation_2 = correlation_2(ranked, token_lengths);
      } catch (const std::invalid_argument&) {
        // all lengths equal: tokenizer-effect correlation undefined
      }
    }
    out.rows.push_back(row);
  }
  return out;
}

// Full ranking + report per center word, everything else held fixed. Center
// and material embeddings both come from the store (cheap, deterministic).
inline std::vector<AnalysisReport> center_word_ablation(
    const extract::EmbeddingStore& store,
    std::span<const std::string> center_words,
    std::span<const embedcore::MaterialRecord> materials,
    const std::map<std::string, std::size_t>& token_lengths,
    const std::string& layer_spec, const AnalysisReport& base_meta) {
  if (center_words.empty())
    throw std::invalid_argument("center_word_ablation: no center words");
  std::vector<AnalysisReport> out;
  for (const auto& word : center_words) {
    const auto ranked = rank_from_store(store, layer_spec, word);
    AnalysisReport r = base_meta;
    r.run_id = base_meta.run_id + "_center_" + word;
    std::vector<std::string> excluded;
    r.correlation_1 = correlation_1(ranked, materials, &excluded);
    r.dropped = excluded;
    if (!token_lengths.empty()) {
      try {
        r.correlation_2 = correlation_2(ranked, token_lengths);
      } catch (const std::invalid_argument&) {
        // all lengths equal: tokenizer-effect correlation undefined
      }
    }
    r.n_materials = ranked.entries.size();
    out.push_back(std::move(r));
  }
  return out;
}

// ------------------------------------------------------------------ output

inline std::string report_csv_header() {
  return "run_id,model_id,context_mode,layer,correlation_1,correlation_2,n,"
         "dropped,seed";
}

namespace detail {

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

inline std::string report_csv_row(const AnalysisReport& r) {
  std::string row = r.run_id + "," + r.model_id + "," + r.context_mode + "," +
                    r.layer_spec + "," + format_double(r.correlation_1) + ",";
  if (r.correlation_2) row += format_double(*r.correlation_2);
  row += "," + std::to_string(r.n_materials) + "," +
         std::to_string(r.dropped.size()) + "," + std::to_string(r.seed);
  return row;
}

}  // namespace detail

inline void write_report_csv(std::span<const AnalysisReport> reports,
                             const std::filesystem::path& path) {
  if (reports.empty()) throw std::invalid_argument("no reports to write");
  std::string out = report_csv_header() + "\n";
  for (const auto& r : reports) out += detail::report_csv_row(r) + "\n";
  io::write_file(path, out);
}

inline void write_report_json(const AnalysisReport& report,
                              const std::filesystem::path& path) {
  io::write_file(path, report.to_json().dump(2) + "\n");
}

inline AnalysisReport load_report_json(const std::filesystem::path& path) {
  return AnalysisReport::from_json(nlohmann::json::parse(io::read_file(path)));
}

// Per-layer bar chart (SVG) mirroring the paper's layer figures: one bar pair
// (correlation_1, correlation_2) per layer.
inline void write_layer_chart_svg(const LayerSweepResult& sweep,
                                  const std::string& run_id,
                                  const std::filesystem::path& path) {
  const int width = 640, height = 360, margin = 40;
  const double plot_w = width - 2.0 * margin;
  const double plot_h = height - 2.0 * margin;
  const double zero_y = margin + plot_h / 2.0;
  const std::size_t n = sweep.rows.size();
  const double band = plot_w / static_cast<double>(n == 0 ? 1 : n);

  std::string svg;
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" +
         std::to_string(width) + "\" height=\"" + std::to_string(height) +
         "\">\n";
  svg += "<text x=\"" + std::to_string(margin) + "\" y=\"20\" font-size=\"14\">" +
         run_id + ": correlation by layer</text>\n";
  svg += "<line x1=\"" + std::to_string(margin) + "\" y1=\"" +
         detail::format_double(zero_y) + "\" x2=\"" +
         std::to_string(width - margin) + "\" y2=\"" +
         detail::format_double(zero_y) + "\" stroke=\"black\"/>\n";
  for (std::size_t i = 0; i < n; ++i) {
    const auto& row = sweep.rows[i];
    const double x0 = margin + band * static_cast<double>(i);
    auto bar = [&](double value, double offset, const char* color) {
      const double h = value * plot_h / 2.0;
      const double y = h >= 0 ? zero_y - h : zero_y;
      svg += "<rect x=\"" + detail::format_double(x0 + offset) + "\" y=\"" +
             detail::format_double(y) + "\" width=\"" +
             detail::format_double(band * 0.35) + "\" height=\"" +
             detail::format_double(std::abs(h)) + "\" fill=\"" + color +
             "\"/>\n";
    };
    bar(row.correlation_1, band * 0.1, "#1f77b4");
    if (row.correlation_2) bar(*row.correlation_2, band * 0.5, "#ff7f0e");
    svg += "<text x=\"" + detail::format_double(x0 + band * 0.3) + "\" y=\"" +
           std::to_string(height - margin + 15) + "\" font-size=\"10\">" +
           std::to_string(row.layer) + "</text>\n";
  }
  svg += "</svg>\n";
  io::write_file(path, svg);
}

}  // namespace matterrank::analyze
