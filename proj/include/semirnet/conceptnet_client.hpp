#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "semirnet/error.hpp"
#include "semirnet/io.hpp"
#include "semirnet/knowledge.hpp"

namespace semirnet {

struct HttpResponse {
  int status = 0;
  std::string body;
};

/// Minimal GET transport so the client can run against a live server,
/// a recorded fixture, or an instrumented fake.
class Transport {
 public:
  virtual ~Transport() = default;
  /// Throws RetriableError when the request cannot be completed.
  virtual HttpResponse get(const std::string& url) = 0;
};

/// Parses a ConceptNet API JSON response into edges.
inline std::vector<ConceptEdge> parse_conceptnet_response(std::string_view body) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(body);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("conceptnet response: invalid JSON: ") + e.what());
  }
  if (!j.is_object()) throw FormatError("conceptnet response: expected a JSON object");
  std::vector<ConceptEdge> edges;
  if (!j.contains("edges")) return edges;
  const auto& arr = j["edges"];
  if (!arr.is_array()) throw FormatError("conceptnet response: 'edges' is not an array");
  try {
    for (const auto& e : arr) {
      ConceptEdge edge;
      edge.start = parse_concept_uri(e.at("start").at("@id").get<std::string>()).term;
      edge.end = parse_concept_uri(e.at("end").at("@id").get<std::string>()).term;
      const auto& rel = e.at("rel");
      edge.relation = rel.contains("label") ? rel["label"].get<std::string>()
                                            : normalize_relation(rel.at("@id").get<std::string>());
      edge.weight = e.contains("weight") ? e["weight"].get<double>() : 1.0;
      if (edge.start.empty() || edge.end.empty() || !(edge.weight >= 0.0)) {
        throw FormatError("conceptnet response: edge with empty concept or negative weight");
      }
      edges.push_back(std::move(edge));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("conceptnet response: malformed edge: ") + e.what());
  }
  return edges;
}

/// One file per normalized term under a directory; contents are the raw
/// response bytes. Reads may run concurrently, writes are serialized.
class ResponseCache {
 public:
  explicit ResponseCache(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::filesystem::create_directories(dir_);
  }

  std::optional<std::string> load(const std::string& term) const {
    std::shared_lock lock(mutex_);
    const auto path = dir_ / term;
    if (!std::filesystem::exists(path)) return std::nullopt;
    return io::read_file(path, ErrorKind::kConfig);
  }

  void store(const std::string& term, std::string_view bytes) {
    std::unique_lock lock(mutex_);
    io::write_file_atomic(dir_ / term, bytes);
  }

  const std::filesystem::path& directory() const noexcept { return dir_; }

 private:
  std::filesystem::path dir_;
  mutable std::shared_mutex mutex_;
};

struct ConceptNetClientConfig {
  std::string endpoint = "https://api.conceptnet.io";
  std::string language = "en";
  int timeout_ms = 5000;
  int max_retries = 3;
  int backoff_ms = 1000;
  int limit = 50;
};

class ConceptNetClient {
 public:
  ConceptNetClient(ConceptNetClientConfig config, Transport& transport, ResponseCache& cache)
      : config_(std::move(config)), transport_(transport), cache_(cache) {}

  std::string url_for(const std::string& term) const {
    std::string base = config_.endpoint;
    while (!base.empty() && base.back() == '/') base.pop_back();
    return base + "/c/" + config_.language + "/" + term + "?limit=" + std::to_string(config_.limit);
  }

  /// Cached terms never touch the transport. HTTP 429 backs off
  /// exponentially up to max_retries, then raises RetriableError.
  std::vector<ConceptEdge> query(std::string_view raw_term) {
    const std::string term = normalize_concept(raw_term);
    if (term.empty()) throw InvalidArgument("conceptnet query: empty term");
    if (term.find('/') != std::string::npos || term.front() == '.') {
      throw InvalidArgument("conceptnet query: term '" + term + "' cannot be used as a cache key");
    }
    if (auto cached = cache_.load(term)) return parse_conceptnet_response(*cached);

    const std::string url = url_for(term);
    for (int attempt = 0;; ++attempt) {
      const HttpResponse resp = transport_.get(url);
      if (resp.status == 429) {
        if (attempt >= config_.max_retries) {
          throw RetriableError("conceptnet query: rate limited after " + std::to_string(attempt + 1) +
                               " attempts for '" + term + "'");
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(config_.backoff_ms << attempt));
        continue;
      }
      if (resp.status >= 500) {
        throw RetriableError("conceptnet query: server error " + std::to_string(resp.status));
      }
      if (resp.status != 200) {
        throw FormatError("conceptnet query: unexpected HTTP status " + std::to_string(resp.status));
      }
      auto edges = parse_conceptnet_response(resp.body);
      cache_.store(term, resp.body);
      return edges;
    }
  }

 private:
  ConceptNetClientConfig config_;
  Transport& transport_;
  ResponseCache& cache_;
};

}  // namespace semirnet
