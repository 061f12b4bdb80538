#include "phonicl/inference.hpp"

#include <chrono>
#include <cstdlib>
#include <sstream>
#include <thread>

#include "httplib.h"
#include "json.hpp"
#include "phonicl/digest.hpp"
#include "phonicl/parallel.hpp"

namespace phonicl {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

void EndpointConfig::validate() const {
  if (model.empty()) throw Error(ErrorCode::InvalidArgument, "endpoint model is empty");
  if (!(temperature >= 0.0)) throw Error(ErrorCode::InvalidArgument, "temperature must be >= 0");
  if (max_tokens < 1) throw Error(ErrorCode::InvalidArgument, "max_tokens must be >= 1");
  if (!(timeout_s > 0.0)) throw Error(ErrorCode::InvalidArgument, "timeout_s must be > 0");
  if (max_retries < 0) throw Error(ErrorCode::InvalidArgument, "max_retries must be >= 0");
  if (parallelism < 1 || parallelism > kMaxParallelism) {
    throw Error(ErrorCode::InvalidArgument,
                "parallelism must lie in [1, " + std::to_string(kMaxParallelism) + "]");
  }
  if (!(backoff_s >= 0.0)) throw Error(ErrorCode::InvalidArgument, "backoff_s must be >= 0");
}

std::string EndpointConfig::api_key_from_env() {
  const char* v = std::getenv(kApiKeyEnv);
  return v ? std::string(v) : std::string();
}

std::string request_fingerprint(const EndpointConfig& cfg, std::string_view prompt) {
  ordered_json j;
  j["model"] = cfg.model;
  j["system"] = cfg.system_prompt ? json(*cfg.system_prompt) : json(nullptr);
  j["prompt"] = std::string(prompt);
  j["temperature"] = cfg.temperature;
  j["max_tokens"] = cfg.max_tokens;
  return sha256_hex(j.dump());
}

std::string request_body(const EndpointConfig& cfg, std::string_view prompt) {
  ordered_json messages = ordered_json::array();
  if (cfg.system_prompt) messages.push_back({{"role", "system"}, {"content", *cfg.system_prompt}});
  messages.push_back({{"role", "user"}, {"content", std::string(prompt)}});
  ordered_json j;
  j["model"] = cfg.model;
  j["messages"] = std::move(messages);
  j["temperature"] = cfg.temperature;
  j["max_tokens"] = cfg.max_tokens;
  return j.dump();
}

std::string parse_completion(std::string_view body, int status) {
  try {
    const json j = json::parse(body);
    const auto& content = j.at("choices").at(0).at("message").at("content");
    if (content.is_null()) return {};
    return content.get<std::string>();
  } catch (const json::exception& e) {
    throw EndpointError(status, std::string("malformed completion body: ") + e.what());
  }
}

std::pair<std::string, std::string> completions_url(std::string_view base_url) {
  std::string base(base_url);
  while (!base.empty() && base.back() == '/') base.pop_back();
  const auto scheme = base.find("://");
  const auto path_start = base.find('/', scheme == std::string::npos ? 0 : scheme + 3);
  std::string origin = path_start == std::string::npos ? base : base.substr(0, path_start);
  std::string path = path_start == std::string::npos ? std::string() : base.substr(path_start);
  if (!path.ends_with("/v1")) path += "/v1";
  path += "/chat/completions";
  return {origin, path};
}

const char* to_string(CacheMode mode) {
  switch (mode) {
    case CacheMode::Record: return "record";
    case CacheMode::Replay: return "replay";
    case CacheMode::Passthrough: return "passthrough";
  }
  return "?";
}

CacheMode parse_cache_mode(std::string_view text) {
  if (text == "record") return CacheMode::Record;
  if (text == "replay") return CacheMode::Replay;
  if (text == "passthrough") return CacheMode::Passthrough;
  throw Error(ErrorCode::InvalidArgument, "unknown cache mode '" + std::string(text) + "'");
}

// ---------------------------------------------------------------------------

std::map<std::string, std::string> ReplayCache::parse(std::string_view jsonl) {
  std::map<std::string, std::string> out;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= jsonl.size()) {
    auto nl = jsonl.find('\n', start);
    if (nl == std::string_view::npos) nl = jsonl.size();
    const std::string_view line = jsonl.substr(start, nl - start);
    ++line_no;
    start = nl + 1;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    try {
      const json j = json::parse(line);
      out[j.at("fingerprint").get<std::string>()] = j.at("response").get<std::string>();
    } catch (const json::exception& e) {
      throw Error(ErrorCode::IoError, "replay cache line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

ReplayCache::ReplayCache(CacheMode mode, std::filesystem::path path) : mode_(mode), path_(std::move(path)) {
  if (path_.empty() || mode_ == CacheMode::Passthrough) return;
  if (std::filesystem::exists(path_)) {
    std::ifstream in(path_, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    entries_ = parse(ss.str());
  } else if (mode_ == CacheMode::Replay) {
    throw Error(ErrorCode::IoError, "replay cache " + path_.string() + " does not exist");
  }
}

std::optional<std::string> ReplayCache::lookup(const std::string& fingerprint) const {
  std::lock_guard lock(mutex_);
  auto it = entries_.find(fingerprint);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

void ReplayCache::record(const std::string& fingerprint, const std::string& response) {
  std::lock_guard lock(mutex_);
  if (!entries_.emplace(fingerprint, response).second) return;
  if (path_.empty()) return;
  if (!out_.is_open()) {
    if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
    out_.open(path_, std::ios::binary | std::ios::app);
    if (!out_) throw Error(ErrorCode::IoError, "cannot append to " + path_.string());
  }
  ordered_json j;
  j["fingerprint"] = fingerprint;
  j["response"] = response;
  out_ << j.dump() << '\n';
  out_.flush();
}

std::size_t ReplayCache::size() const {
  std::lock_guard lock(mutex_);
  return entries_.size();
}

// ---------------------------------------------------------------------------

namespace {

class HttplibTransport final : public Transport {
 public:
  HttpResponse post(const std::string& origin, const std::string& path, const Headers& headers,
                    const std::string& body, double timeout_s) override {
    httplib::Client client(origin);
    const auto secs = static_cast<time_t>(timeout_s);
    const auto usecs = static_cast<time_t>((timeout_s - static_cast<double>(secs)) * 1e6);
    client.set_connection_timeout(secs, usecs);
    client.set_read_timeout(secs, usecs);
    client.set_write_timeout(secs, usecs);
    httplib::Headers h;
    for (const auto& [k, v] : headers) h.emplace(k, v);

    const auto t0 = std::chrono::steady_clock::now();
    auto res = client.Post(path, h, body, "application/json");
    if (!res) {
      const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      const auto err = res.error();
      const bool timed_out = err == httplib::Error::ConnectionTimeout ||
                             (err == httplib::Error::Read && elapsed >= 0.9 * timeout_s);
      return {timed_out ? TransportStatus::Timeout : TransportStatus::ConnectionError, 0,
              httplib::to_string(err)};
    }
    return {TransportStatus::Ok, res->status, res->body};
  }
};

bool retryable_status(int status) { return status == 429 || status >= 500; }

}  // namespace

std::shared_ptr<Transport> make_http_transport() { return std::make_shared<HttplibTransport>(); }

LlmClient::LlmClient(EndpointConfig cfg, std::shared_ptr<Transport> transport)
    : cfg_(std::move(cfg)),
      transport_(transport ? std::move(transport) : make_http_transport()),
      sleeper_([](double s) { std::this_thread::sleep_for(std::chrono::duration<double>(s)); }) {
  cfg_.validate();
}

std::string LlmClient::request(const std::string& prompt) const {
  const auto [origin, path] = completions_url(cfg_.base_url);
  Headers headers{{"Accept", "application/json"}};
  if (!cfg_.api_key.empty()) headers.emplace_back("Authorization", "Bearer " + cfg_.api_key);
  const std::string body = request_body(cfg_, prompt);

  HttpResponse last;
  for (int attempt = 0; attempt <= cfg_.max_retries; ++attempt) {
    if (attempt > 0) sleeper_(cfg_.backoff_s * static_cast<double>(1u << (attempt - 1)));
    last = transport_->post(origin, path, headers, body, cfg_.timeout_s);
    if (last.transport == TransportStatus::Ok) {
      if (last.status >= 200 && last.status < 300) return parse_completion(last.body, last.status);
      if (!retryable_status(last.status)) throw EndpointError(last.status, last.body);
    }
  }
  switch (last.transport) {
    case TransportStatus::Timeout:
      throw Error(ErrorCode::Timeout, "request timed out after " + std::to_string(cfg_.max_retries + 1) +
                                          " attempts");
    case TransportStatus::ConnectionError:
      throw EndpointError(0, "transport failure: " + last.body);
    case TransportStatus::Ok:
      break;
  }
  throw EndpointError(last.status, last.body);
}

std::string LlmClient::complete(const std::string& prompt, ReplayCache& cache) const {
  if (cache.mode() == CacheMode::Passthrough) return request(prompt);
  const std::string fp = request_fingerprint(cfg_, prompt);
  if (auto hit = cache.lookup(fp)) return *hit;
  if (cache.mode() == CacheMode::Replay) {
    throw Error(ErrorCode::CacheMiss, "no cached response for fingerprint " + fp);
  }
  std::string text = request(prompt);
  cache.record(fp, text);
  return text;
}

std::vector<CompletionResult> LlmClient::complete_batch(const std::vector<std::string>& prompts,
                                                        ReplayCache& cache) const {
  std::vector<CompletionResult> out(prompts.size());
  parallel_for(prompts.size(), cfg_.parallelism, [&](std::size_t i) {
    try {
      out[i].text = complete(prompts[i], cache);
    } catch (const Error& e) {
      out[i].error = e.code();
      out[i].message = e.what();
    } catch (const std::exception& e) {
      out[i].error = ErrorCode::EndpointError;
      out[i].message = e.what();
    }
  });
  return out;
}

std::string complete(const EndpointConfig& cfg, const std::string& prompt, ReplayCache& cache) {
  return LlmClient(cfg).complete(prompt, cache);
}

std::vector<CompletionResult> complete_batch(const EndpointConfig& cfg, const std::vector<std::string>& prompts,
                                             ReplayCache& cache) {
  return LlmClient(cfg).complete_batch(prompts, cache);
}

}  // namespace phonicl
