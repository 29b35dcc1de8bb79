#pragma once

// Run configuration and reproducibility manifests shared by every CLI
// command. Config values come from an optional JSON file with flat CLI-flag
// overrides (flags win); the fully resolved config is echoed into the run
// manifest so a run can be re-executed bit-identically on the same assets.

#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "matterrank/errors.hpp"
#include "matterrank/io_util.hpp"
#include "matterrank/remote.hpp"

namespace matterrank::cli {

inline constexpr const char* kArtifactVersion = "matterrank 0.1.0";

struct RunConfig {
  // Embedding source: exactly one of these three.
  bool use_stub = false;
  std::string model_path;  // BERT checkpoint dir, or a toy-encoder weights file
  extract::EmbeddingProviderConfig provider;  // configured when endpoint set

  std::string materials_csv;
  std::string corpus_dir;
  std::string contexts_file;
  std::string context_mode = "free";  // free | average
  std::string center_mode = "auto";   // auto | free | average
  std::string layer_spec = "single(3)";
  std::string center_word = "thermoelectric";
  std::vector<std::string> center_words;  // extra ablation centers
  std::size_t sample_limit = 100;
  std::uint64_t seed = 42;
  std::string out_dir;
  std::string run_id = "run";

  // eval inputs
  std::string ranking_file;
  std::string store_file;
  std::string token_lengths_file;
  bool has_length_filter = false;
  std::size_t filter_lo = 7;
  std::size_t filter_hi = 11;

  // finetune inputs
  std::string schedule_config;
  std::string triplets_file;
  std::string pairs_file;
  std::string sts_file;
  int step = 0;  // 0 = all
  bool toy = false;
  bool resume = false;
  std::string base_checkpoint;

  // ingest extras
  bool glossary = false;
  bool fetch_descriptions = false;
  bool offline = false;
  std::string cache_dir;

  std::string source_kind() const {
    int configured = 0;
    std::string kind;
    if (use_stub) {
      ++configured;
      kind = "stub";
    }
    if (!model_path.empty()) {
      ++configured;
      kind = "model";
    }
    if (!provider.endpoint.empty()) {
      ++configured;
      kind = "provider";
    }
    if (configured == 0)
      throw ConfigError(
          "no embedding source configured (need --stub, --model-path or a "
          "provider endpoint)");
    if (configured > 1)
      throw ConfigError("exactly one embedding source must be configured");
    return kind;
  }

  nlohmann::json to_json() const {
    return {{"use_stub", use_stub},
            {"model_path", model_path},
            {"provider",
             {{"endpoint", provider.endpoint},
              {"model", provider.model},
              {"credential_env", provider.credential_env},
              {"timeout_seconds", provider.timeout_seconds},
              {"max_retries", provider.max_retries}}},
            {"materials_csv", materials_csv},
            {"corpus_dir", corpus_dir},
            {"contexts_file", contexts_file},
            {"context_mode", context_mode},
            {"center_mode", center_mode},
            {"layer_spec", layer_spec},
            {"center_word", center_word},
            {"center_words", center_words},
            {"sample_limit", sample_limit},
            {"seed", seed},
            {"out_dir", out_dir},
            {"run_id", run_id},
            {"ranking_file", ranking_file},
            {"store_file", store_file},
            {"token_lengths_file", token_lengths_file},
            {"has_length_filter", has_length_filter},
            {"filter_lo", filter_lo},
            {"filter_hi", filter_hi},
            {"schedule_config", schedule_config},
            {"triplets_file", triplets_file},
            {"pairs_file", pairs_file},
            {"sts_file", sts_file},
            {"step", step},
            {"toy", toy},
            {"resume", resume},
            {"base_checkpoint", base_checkpoint},
            {"glossary", glossary},
            {"fetch_descriptions", fetch_descriptions},
            {"offline", offline},
            {"cache_dir", cache_dir}};
  }

  // Credential-looking keys are rejected outright: secrets belong in the
  // environment, never in config files. Keys naming an environment variable
  // (suffix "_env") are fine.
  static void reject_credential_keys(const nlohmann::json& j,
                                     const std::string& path = "") {
    static const std::vector<std::string> needles = {
        "api_key", "apikey", "token", "secret", "password", "credential",
        "authorization"};
    if (!j.is_object()) return;
    for (const auto& [key, value] : j.items()) {
      std::string lower = key;
      std::transform(lower.begin(), lower.end(), lower.begin(),
                     [](unsigned char c) { return std::tolower(c); });
      const bool names_env = lower.size() > 4 &&
                             lower.compare(lower.size() - 4, 4, "_env") == 0;
      if (!names_env) {
        for (const auto& needle : needles) {
          if (lower.find(needle) != std::string::npos)
            throw ConfigError("config file contains credential-looking key '" +
                              path + key +
                              "'; pass credentials via environment variables");
        }
      }
      reject_credential_keys(value, path + key + ".");
    }
  }

  static RunConfig from_json(const nlohmann::json& j) {
    reject_credential_keys(j);
    RunConfig c;
    c.use_stub = j.value("use_stub", c.use_stub);
    c.model_path = j.value("model_path", c.model_path);
    if (j.contains("provider")) {
      const auto& p = j.at("provider");
      c.provider.endpoint = p.value("endpoint", "");
      c.provider.model = p.value("model", "");
      c.provider.credential_env = p.value("credential_env", "");
      c.provider.timeout_seconds = p.value("timeout_seconds", 30.0);
      c.provider.max_retries = p.value("max_retries", 2);
    }
    c.materials_csv = j.value("materials_csv", c.materials_csv);
    c.corpus_dir = j.value("corpus_dir", c.corpus_dir);
    c.contexts_file = j.value("contexts_file", c.contexts_file);
    c.context_mode = j.value("context_mode", c.context_mode);
    c.center_mode = j.value("center_mode", c.center_mode);
    c.layer_spec = j.value("layer_spec", c.layer_spec);
    c.center_word = j.value("center_word", c.center_word);
    c.center_words = j.value("center_words", c.center_words);
    c.sample_limit = j.value("sample_limit", c.sample_limit);
    c.seed = j.value("seed", c.seed);
    c.out_dir = j.value("out_dir", c.out_dir);
    c.run_id = j.value("run_id", c.run_id);
    c.ranking_file = j.value("ranking_file", c.ranking_file);
    c.store_file = j.value("store_file", c.store_file);
    c.token_lengths_file = j.value("token_lengths_file", c.token_lengths_file);
    c.has_length_filter = j.value("has_length_filter", c.has_length_filter);
    c.filter_lo = j.value("filter_lo", c.filter_lo);
    c.filter_hi = j.value("filter_hi", c.filter_hi);
    c.schedule_config = j.value("schedule_config", c.schedule_config);
    c.triplets_file = j.value("triplets_file", c.triplets_file);
    c.pairs_file = j.value("pairs_file", c.pairs_file);
    c.sts_file = j.value("sts_file", c.sts_file);
    c.step = j.value("step", c.step);
    c.toy = j.value("toy", c.toy);
    c.resume = j.value("resume", c.resume);
    c.base_checkpoint = j.value("base_checkpoint", c.base_checkpoint);
    c.glossary = j.value("glossary", c.glossary);
    c.fetch_descriptions = j.value("fetch_descriptions", c.fetch_descriptions);
    c.offline = j.value("offline", c.offline);
    c.cache_dir = j.value("cache_dir", c.cache_dir);
    return c;
  }

  static RunConfig from_file(const std::filesystem::path& path) {
    try {
      return from_json(nlohmann::json::parse(io::read_file(path)));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("config file " + path.string() +
                        " is not valid JSON: " + e.what());
    }
  }
};

struct RunManifest {
  int manifest_version = 1;
  std::string command;
  nlohmann::json resolved_config;
  std::map<std::string, std::string> input_hashes;
  std::string artifact_version = kArtifactVersion;
  std::string created_utc;

  nlohmann::json to_json() const {
    return {{"manifest_version", manifest_version},
            {"command", command},
            {"config", resolved_config},
            {"input_hashes", input_hashes},
            {"artifact_version", artifact_version},
            {"created_utc", created_utc}};
  }

  static RunManifest from_json(const nlohmann::json& j) {
    RunManifest m;
    m.manifest_version = j.at("manifest_version").get<int>();
    m.command = j.at("command").get<std::string>();
    m.resolved_config = j.at("config");
    m.input_hashes =
        j.at("input_hashes").get<std::map<std::string, std::string>>();
    m.artifact_version = j.at("artifact_version").get<std::string>();
    m.created_utc = j.at("created_utc").get<std::string>();
    return m;
  }
};

}  // namespace matterrank::cli
