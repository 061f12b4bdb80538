#pragma once

// Chat-completions client with a fingerprint-keyed replay cache.
//
// Wire format: POST <base_url>/v1/chat/completions (a base_url already
// ending in /v1 is not doubled) with bearer auth and body
//   {"model", "messages": [{"role": "user", "content": prompt}],
//    "temperature", "max_tokens"}
// An optional system prompt is sent as a leading system message. The reply
// text is choices[0].message.content.
//
// Cache modes
//   Replay       hits only; a miss is CacheMiss and the network is never used
//   Record       hits are served from the cache; misses go to the endpoint
//                and are appended to the cache file
//   Passthrough  the cache is ignored
//
// The API key comes from PHONICL_API_KEY and is never written anywhere.

#include <cstddef>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "phonicl/error.hpp"

namespace phonicl {

inline constexpr const char* kApiKeyEnv = "PHONICL_API_KEY";
inline constexpr std::size_t kMaxParallelism = 64;

struct EndpointConfig {
  std::string base_url = "http://127.0.0.1:8000";
  std::string model;
  std::string api_key;
  double temperature = 0.0;
  int max_tokens = 256;
  double timeout_s = 60.0;
  int max_retries = 3;
  std::size_t parallelism = 1;
  std::optional<std::string> system_prompt;
  /// First retry delay; doubles on every further attempt.
  double backoff_s = 0.5;

  void validate() const;
  /// Value of PHONICL_API_KEY, empty when unset.
  static std::string api_key_from_env();
};

/// SHA-256 hex over model, system prompt, prompt bytes, temperature and
/// max_tokens. Independent of base_url, key and transport settings.
std::string request_fingerprint(const EndpointConfig& cfg, std::string_view prompt);

std::string request_body(const EndpointConfig& cfg, std::string_view prompt);

/// Extracts choices[0].message.content; throws EndpointError on a malformed body.
std::string parse_completion(std::string_view body, int status = 200);

/// "/v1/chat/completions" appended to base_url, split into origin and path.
std::pair<std::string, std::string> completions_url(std::string_view base_url);

enum class CacheMode { Record, Replay, Passthrough };

const char* to_string(CacheMode mode);
CacheMode parse_cache_mode(std::string_view text);

/// JSONL of {"fingerprint", "response"}. Lookups and records are safe from
/// many threads; appends to the file go through one lock.
class ReplayCache {
 public:
  explicit ReplayCache(CacheMode mode = CacheMode::Passthrough, std::filesystem::path path = {});
  ReplayCache(const ReplayCache&) = delete;
  ReplayCache& operator=(const ReplayCache&) = delete;

  CacheMode mode() const noexcept { return mode_; }
  std::optional<std::string> lookup(const std::string& fingerprint) const;
  void record(const std::string& fingerprint, const std::string& response);
  std::size_t size() const;

  static std::map<std::string, std::string> parse(std::string_view jsonl);

 private:
  CacheMode mode_;
  std::filesystem::path path_;
  mutable std::mutex mutex_;
  std::map<std::string, std::string> entries_;
  std::ofstream out_;
};

enum class TransportStatus { Ok, Timeout, ConnectionError };

struct HttpResponse {
  TransportStatus transport = TransportStatus::Ok;
  int status = 0;
  std::string body;
};

using Headers = std::vector<std::pair<std::string, std::string>>;

class Transport {
 public:
  virtual ~Transport() = default;
  virtual HttpResponse post(const std::string& origin, const std::string& path, const Headers& headers,
                            const std::string& body, double timeout_s) = 0;
};

/// cpp-httplib transport (http and https).
std::shared_ptr<Transport> make_http_transport();

struct CompletionResult {
  std::optional<std::string> text;
  std::optional<ErrorCode> error;
  std::string message;

  bool ok() const noexcept { return text.has_value(); }
};

class LlmClient {
 public:
  explicit LlmClient(EndpointConfig cfg, std::shared_ptr<Transport> transport = nullptr);

  /// Throws CacheMiss, EndpointError or Timeout.
  std::string complete(const std::string& prompt, ReplayCache& cache) const;

  /// Order-preserving; at most cfg.parallelism requests in flight. Failures
  /// land in their own slot without stopping the batch.
  std::vector<CompletionResult> complete_batch(const std::vector<std::string>& prompts,
                                               ReplayCache& cache) const;

  /// Replaces the backoff sleep (tests pass a recorder).
  void set_sleeper(std::function<void(double)> sleeper) { sleeper_ = std::move(sleeper); }

  const EndpointConfig& config() const noexcept { return cfg_; }

 private:
  std::string request(const std::string& prompt) const;

  EndpointConfig cfg_;
  std::shared_ptr<Transport> transport_;
  std::function<void(double)> sleeper_;
};

std::string complete(const EndpointConfig& cfg, const std::string& prompt, ReplayCache& cache);
std::vector<CompletionResult> complete_batch(const EndpointConfig& cfg, const std::vector<std::string>& prompts,
                                             ReplayCache& cache);

}  // namespace phonicl
