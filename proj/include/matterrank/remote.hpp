#pragma once

// Client for providers that serve sentence/word embeddings over HTTPS JSON:
// request {"model": ..., "input": [text]}, response {"data": [{"embedding":
// [...]}]}. The credential is read from the environment variable named in the
// config, never from config files.

#include <chrono>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

#include "matterrank/httplib_compat.hpp"
#include <nlohmann/json.hpp>

#include "matterrank/embedcore.hpp"
#include "matterrank/errors.hpp"

namespace matterrank::extract {

struct EmbeddingProviderConfig {
  std::string endpoint;  // e.g. https://api.openai.com/v1/embeddings
  std::string model;     // e.g. text-embedding-ada-002
  std::string credential_env;
  double timeout_seconds = 30.0;
  int max_retries = 2;

  void validate() const {
    if (endpoint.empty()) throw ConfigError("provider endpoint not set");
    if (model.empty()) throw ConfigError("provider model not set");
    if (credential_env.empty())
      throw ConfigError("provider credential environment variable not named");
    if (timeout_seconds <= 0) throw ConfigError("provider timeout must be > 0");
    if (max_retries < 0) throw ConfigError("provider max_retries must be >= 0");
  }
};

namespace detail {

struct SplitUrl {
  std::string base;  // scheme://host[:port]
  std::string path;
};

inline SplitUrl split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos)
    throw ConfigError("provider endpoint must include a scheme: " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

}  // namespace detail

// Provider's vector verbatim. Retries transport failures and non-200 statuses
// up to cfg.max_retries times; the thrown error carries the attempt log.
inline embedcore::Vector fetch_remote_embedding(
    const std::string& text, const EmbeddingProviderConfig& cfg,
    std::vector<std::string>* attempt_log = nullptr) {
  cfg.validate();
  if (text.empty())
    throw std::invalid_argument("fetch_remote_embedding: empty text");
  const char* credential = std::getenv(cfg.credential_env.c_str());
  if (credential == nullptr || *credential == '\0')
    throw ConfigError("credential environment variable " + cfg.credential_env +
                      " is not set");

  const auto url = detail::split_url(cfg.endpoint);
  httplib::Client client(url.base);
  const auto timeout = std::chrono::milliseconds(
      static_cast<long long>(cfg.timeout_seconds * 1000.0));
  client.set_connection_timeout(timeout);
  client.set_read_timeout(timeout);
  client.set_write_timeout(timeout);
  client.set_bearer_token_auth(credential);

  const std::string body =
      nlohmann::json{{"model", cfg.model}, {"input", {text}}}.dump();

  std::vector<std::string> attempts;
  for (int attempt = 0; attempt <= cfg.max_retries; ++attempt) {
    if (attempt > 0)
      std::this_thread::sleep_for(std::chrono::milliseconds(50 * attempt));
    auto res = client.Post(url.path, body, "application/json");
    if (!res) {
      attempts.push_back("attempt " + std::to_string(attempt + 1) +
                         ": transport error (" + httplib::to_string(res.error()) +
                         ")");
      continue;
    }
    if (res->status != 200) {
      attempts.push_back("attempt " + std::to_string(attempt + 1) + ": HTTP " +
                         std::to_string(res->status));
      continue;
    }
    attempts.push_back("attempt " + std::to_string(attempt + 1) + ": HTTP 200");
    if (attempt_log != nullptr) *attempt_log = attempts;
    try {
      const auto j = nlohmann::json::parse(res->body);
      auto values = j.at("data").at(0).at("embedding").get<std::vector<double>>();
      if (values.empty())
        throw ModelError("provider returned an empty embedding");
      return embedcore::Vector(std::move(values));
    } catch (const nlohmann::json::exception& e) {
      throw ModelError(std::string("provider response malformed: ") + e.what());
    }
  }
  if (attempt_log != nullptr) *attempt_log = attempts;
  std::string log;
  for (const auto& a : attempts) log += "\n  " + a;
  throw ModelError("embedding request failed after " +
                   std::to_string(cfg.max_retries + 1) + " attempts:" + log);
}

}  // namespace matterrank::extract
