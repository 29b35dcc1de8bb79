#pragma once

// Embedding store: one JSONL file per run, one record per stored vector,
// plus a sidecar manifest describing how the vectors were produced. Lookups
// count hits so callers can assert that analyses reuse embeddings instead of
// recomputing them.

#include <cstdint>
#include <map>
#include <string>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "matterrank/embedcore.hpp"
#include "matterrank/errors.hpp"
#include "matterrank/io_util.hpp"

namespace matterrank::extract {

struct StoreRecord {
  std::string key;
  std::string kind;  // "material" | "center"
  std::string layer_spec;
  embedcore::Vector vector;
};

struct StoreManifest {
  std::string model_id;
  std::size_t dim = 0;
  std::string layer_spec;
  std::string context_mode;  // "free" | "average" | "provider"
  std::uint64_t seed = 0;
  std::string created_utc;

  nlohmann::json to_json() const {
    return {{"model_id", model_id},   {"dim", dim},
            {"layer_spec", layer_spec}, {"context_mode", context_mode},
            {"seed", seed},           {"created_utc", created_utc}};
  }

  static StoreManifest from_json(const nlohmann::json& j) {
    StoreManifest m;
    m.model_id = j.at("model_id").get<std::string>();
    m.dim = j.at("dim").get<std::size_t>();
    m.layer_spec = j.at("layer_spec").get<std::string>();
    m.context_mode = j.at("context_mode").get<std::string>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.created_utc = j.at("created_utc").get<std::string>();
    return m;
  }
};

class EmbeddingStore {
 public:
  void put(const std::string& kind, const std::string& key,
           const std::string& layer_spec, embedcore::Vector vector) {
    if (kind != "material" && kind != "center")
      throw std::invalid_argument("store: unknown record kind '" + kind + "'");
    const Key k{kind, key, layer_spec};
    auto it = index_.find(k);
    if (it != index_.end()) {
      records_[it->second].vector = std::move(vector);
      return;
    }
    index_.emplace(k, records_.size());
    records_.push_back({key, kind, layer_spec, std::move(vector)});
  }

  bool contains(const std::string& kind, const std::string& key,
                const std::string& layer_spec) const {
    return index_.contains({kind, key, layer_spec});
  }

  // Counted lookup; nullptr when absent.
  const embedcore::Vector* find(const std::string& kind, const std::string& key,
                                const std::string& layer_spec) const {
    auto it = index_.find({kind, key, layer_spec});
    if (it == index_.end()) return nullptr;
    ++hits_;
    return &records_[it->second].vector;
  }

  const embedcore::Vector& get(const std::string& kind, const std::string& key,
                               const std::string& layer_spec) const {
    const auto* v = find(kind, key, layer_spec);
    if (v == nullptr)
      throw std::out_of_range("store: no record (" + kind + ", " + key + ", " +
                              layer_spec + ")");
    return *v;
  }

  const std::vector<StoreRecord>& records() const { return records_; }
  std::size_t hits() const { return hits_; }

  StoreManifest& manifest() { return manifest_; }
  const StoreManifest& manifest() const { return manifest_; }

  // Writes <path> (JSONL, insertion order) and <path>.manifest.json.
  void save(const std::filesystem::path& path) const {
    std::string out;
    for (const auto& r : records_) {
      nlohmann::json j{{"key", r.key},
                       {"kind", r.kind},
                       {"layer_spec", r.layer_spec},
                       {"vector", r.vector.values()}};
      out += j.dump();
      out += '\n';
    }
    io::write_file(path, out);
    io::write_file(manifest_path(path), manifest_.to_json().dump(2) + "\n");
  }

  static EmbeddingStore load(const std::filesystem::path& path) {
    EmbeddingStore s;
    for (const auto& line : io::read_lines(path)) {
      if (line.empty()) continue;
      nlohmann::json j = nlohmann::json::parse(line);
      s.put(j.at("kind").get<std::string>(), j.at("key").get<std::string>(),
            j.at("layer_spec").get<std::string>(),
            embedcore::Vector(j.at("vector").get<std::vector<double>>()));
    }
    const auto mpath = manifest_path(path);
    if (std::filesystem::exists(mpath))
      s.manifest_ =
          StoreManifest::from_json(nlohmann::json::parse(io::read_file(mpath)));
    return s;
  }

  static std::filesystem::path manifest_path(const std::filesystem::path& p) {
    return p.string() + ".manifest.json";
  }

 private:
  using Key = std::tuple<std::string, std::string, std::string>;

  std::vector<StoreRecord> records_;
  std::map<Key, std::size_t> index_;
  StoreManifest manifest_;
  mutable std::size_t hits_ = 0;
};

}  // namespace matterrank::extract
