#include <gtest/gtest.h>

#include <atomic>
#include <cstdlib>
#include <deque>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include "httplib.h"
#include "json.hpp"
#include "phonicl/error.hpp"
#include "phonicl/inference.hpp"

using namespace phonicl;
using json = nlohmann::json;

namespace {

std::string reply(const std::string& text) {
  return json{{"choices", {{{"message", {{"role", "assistant"}, {"content", text}}}}}}}.dump();
}

// Replays scripted responses and records every request.
class FakeTransport : public Transport {
 public:
  std::deque<HttpResponse> script;
  std::vector<std::string> bodies;
  std::vector<Headers> headers;
  std::vector<std::string> urls;
  std::mutex mutex;

  HttpResponse post(const std::string& origin, const std::string& path, const Headers& h, const std::string& body,
                    double) override {
    std::lock_guard lock(mutex);
    urls.push_back(origin + path);
    headers.push_back(h);
    bodies.push_back(body);
    if (script.empty()) {
      const auto prompt = json::parse(body)["messages"].back()["content"].get<std::string>();
      if (prompt.find("fail") != std::string::npos) return {TransportStatus::Ok, 400, "bad"};
      return {TransportStatus::Ok, 200, reply("echo:" + prompt)};
    }
    auto r = script.front();
    script.pop_front();
    return r;
  }
};

EndpointConfig config() {
  EndpointConfig c;
  c.model = "llama3-8b-instruct";
  c.api_key = "secret-key";
  c.backoff_s = 0.5;
  return c;
}

std::filesystem::path temp_file(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("phonicl_inf_" + name);
  std::filesystem::remove(p);
  return p;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::IoError;
}

}  // namespace

TEST(Inference, UrlJoining) {
  EXPECT_EQ(completions_url("http://h:8000"), (std::pair<std::string, std::string>{"http://h:8000", "/v1/chat/completions"}));
  EXPECT_EQ(completions_url("http://h:8000/v1/"), (std::pair<std::string, std::string>{"http://h:8000", "/v1/chat/completions"}));
  EXPECT_EQ(completions_url("https://api.x.com/openai"),
            (std::pair<std::string, std::string>{"https://api.x.com", "/openai/v1/chat/completions"}));
}

TEST(Inference, RequestBodyAndFingerprint) {
  auto c = config();
  const auto body = json::parse(request_body(c, "hi"));
  EXPECT_EQ(body["model"], "llama3-8b-instruct");
  EXPECT_EQ(body["messages"].size(), 1u);
  EXPECT_EQ(body["messages"][0]["role"], "user");
  EXPECT_EQ(body["messages"][0]["content"], "hi");
  EXPECT_EQ(body["temperature"], 0.0);
  EXPECT_EQ(body["max_tokens"], 256);

  const auto fp = request_fingerprint(c, "hi");
  EXPECT_EQ(fp.size(), 64u);
  auto other = c;
  other.base_url = "http://elsewhere";
  other.api_key = "k2";
  other.max_retries = 9;
  EXPECT_EQ(request_fingerprint(other, "hi"), fp);
  other.max_tokens = 10;
  EXPECT_NE(request_fingerprint(other, "hi"), fp);
  EXPECT_NE(request_fingerprint(c, "hi "), fp);
  c.system_prompt = "be brief";
  EXPECT_NE(request_fingerprint(c, "hi"), fp);
  const auto with_sys = json::parse(request_body(c, "hi"));
  EXPECT_EQ(with_sys["messages"][0]["role"], "system");
  EXPECT_EQ(with_sys["messages"][1]["content"], "hi");
}

TEST(Inference, ParseCompletion) {
  EXPECT_EQ(parse_completion(reply("ok")), "ok");
  EXPECT_EQ(parse_completion(R"({"choices":[{"message":{"content":null}}]})"), "");
  try {
    parse_completion("{}", 200);
    FAIL();
  } catch (const EndpointError& e) {
    EXPECT_EQ(e.status(), 200);
  }
}

TEST(Inference, ConfigValidation) {
  auto c = config();
  EXPECT_NO_THROW(c.validate());
  c.parallelism = 0;
  EXPECT_THROW(c.validate(), Error);
  c = config();
  c.parallelism = kMaxParallelism + 1;
  EXPECT_THROW(c.validate(), Error);
  c = config();
  c.model.clear();
  EXPECT_THROW(c.validate(), Error);
  c = config();
  c.temperature = -1;
  EXPECT_THROW(c.validate(), Error);
}

TEST(Inference, ApiKeyFromEnvironment) {
  ::setenv(kApiKeyEnv, "env-key", 1);
  EXPECT_EQ(EndpointConfig::api_key_from_env(), "env-key");
  ::unsetenv(kApiKeyEnv);
  EXPECT_EQ(EndpointConfig::api_key_from_env(), "");
}

TEST(Inference, RetriesWithExponentialBackoff) {
  auto t = std::make_shared<FakeTransport>();
  t->script = {{TransportStatus::Ok, 429, "slow down"},
               {TransportStatus::Ok, 503, "busy"},
               {TransportStatus::ConnectionError, 0, "reset"},
               {TransportStatus::Ok, 200, reply("done")}};
  LlmClient client(config(), t);
  std::vector<double> sleeps;
  client.set_sleeper([&](double s) { sleeps.push_back(s); });
  ReplayCache cache;
  EXPECT_EQ(client.complete("p", cache), "done");
  EXPECT_EQ(sleeps, (std::vector<double>{0.5, 1.0, 2.0}));
  EXPECT_EQ(t->urls.front(), "http://127.0.0.1:8000/v1/chat/completions");
  bool auth = false;
  for (const auto& [k, v] : t->headers.front()) auth |= k == "Authorization" && v == "Bearer secret-key";
  EXPECT_TRUE(auth);
}

TEST(Inference, ErrorMapping) {
  ReplayCache cache;
  auto run = [&](std::deque<HttpResponse> script, int retries) {
    auto t = std::make_shared<FakeTransport>();
    t->script = std::move(script);
    auto c = config();
    c.max_retries = retries;
    LlmClient client(c, t);
    client.set_sleeper([](double) {});
    client.complete("p", cache);
  };
  try {
    run({{TransportStatus::Ok, 401, "nope"}}, 3);
    FAIL();
  } catch (const EndpointError& e) {
    EXPECT_EQ(e.status(), 401);
  }
  try {
    run({{TransportStatus::Ok, 500, "x"}, {TransportStatus::Ok, 502, "y"}}, 1);
    FAIL();
  } catch (const EndpointError& e) {
    EXPECT_EQ(e.status(), 502);
  }
  EXPECT_EQ(code_of([&] { run({{TransportStatus::Timeout, 0, ""}, {TransportStatus::Timeout, 0, ""}}, 1); }),
            ErrorCode::Timeout);
  try {
    run({{TransportStatus::ConnectionError, 0, "refused"}}, 0);
    FAIL();
  } catch (const EndpointError& e) {
    EXPECT_EQ(e.status(), 0);
  }
}

TEST(Cache, ReplayRecordPassthrough) {
  const auto path = temp_file("cache.jsonl");
  auto t = std::make_shared<FakeTransport>();
  const LlmClient client(config(), t);
  {
    EXPECT_EQ(code_of([&] { ReplayCache c(CacheMode::Replay, path); }), ErrorCode::IoError);
    ReplayCache rec(CacheMode::Record, path);
    EXPECT_EQ(client.complete("one", rec), "echo:one");
    EXPECT_EQ(client.complete("one", rec), "echo:one");
    EXPECT_EQ(client.complete("two", rec), "echo:two");
    EXPECT_EQ(t->bodies.size(), 2u);
    EXPECT_EQ(rec.size(), 2u);
  }
  const auto content = slurp(path);
  EXPECT_EQ(std::count(content.begin(), content.end(), '\n'), 2);
  EXPECT_EQ(content.find("secret-key"), std::string::npos);

  ReplayCache replay(CacheMode::Replay, path);
  EXPECT_EQ(client.complete("two", replay), "echo:two");
  EXPECT_EQ(t->bodies.size(), 2u);
  EXPECT_EQ(code_of([&] { client.complete("three", replay); }), ErrorCode::CacheMiss);
  EXPECT_EQ(t->bodies.size(), 2u);

  ReplayCache pass(CacheMode::Passthrough, path);
  EXPECT_EQ(client.complete("one", pass), "echo:one");
  EXPECT_EQ(t->bodies.size(), 3u);
  std::filesystem::remove(path);
}

TEST(Cache, ParseErrors) {
  EXPECT_EQ(ReplayCache::parse("\n{\"fingerprint\":\"a\",\"response\":\"b\"}\n\n").size(), 1u);
  EXPECT_EQ(code_of([] { ReplayCache::parse("{\"fingerprint\":1}\n"); }), ErrorCode::IoError);
  EXPECT_EQ(parse_cache_mode(to_string(CacheMode::Record)), CacheMode::Record);
  EXPECT_THROW(parse_cache_mode("sometimes"), Error);
}

TEST(Batch, OrderPreservingWithFailureSlots) {
  auto t = std::make_shared<FakeTransport>();
  auto c = config();
  c.parallelism = 8;
  const LlmClient client(c, t);
  std::vector<std::string> prompts;
  for (int i = 0; i < 40; ++i) prompts.push_back(i % 7 == 3 ? "fail " + std::to_string(i) : "p" + std::to_string(i));
  ReplayCache cache;
  const auto out = client.complete_batch(prompts, cache);
  ASSERT_EQ(out.size(), prompts.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (i % 7 == 3) {
      EXPECT_FALSE(out[i].ok());
      EXPECT_EQ(out[i].error, ErrorCode::EndpointError);
    } else {
      EXPECT_EQ(out[i].text, "echo:" + prompts[i]);
    }
  }
}

TEST(Http, WireFormatAgainstLocalServer) {
  httplib::Server server;
  std::atomic<int> hits{0};
  std::atomic<int> in_flight{0};
  std::atomic<int> peak{0};
  std::mutex seen_mutex;
  std::vector<std::string> auths;
  std::vector<std::string> paths;
  server.Post(R"(/.*)", [&](const httplib::Request& req, httplib::Response& res) {
    const int now = ++in_flight;
    int p = peak.load();
    while (now > p && !peak.compare_exchange_weak(p, now)) {
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
    {
      std::lock_guard lock(seen_mutex);
      auths.push_back(req.get_header_value("Authorization"));
      paths.push_back(req.path);
    }
    const auto body = json::parse(req.body);
    const auto prompt = body["messages"].back()["content"].get<std::string>();
    --in_flight;
    if (prompt == "flaky" && hits++ == 0) {
      res.status = 503;
      return;
    }
    if (prompt == "slow") std::this_thread::sleep_for(std::chrono::milliseconds(1500));
    res.set_content(reply("server:" + prompt + ":" + body["model"].get<std::string>()), "application/json");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread th([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  auto c = config();
  c.base_url = "http://127.0.0.1:" + std::to_string(port) + "/v1";
  c.backoff_s = 0.01;
  c.parallelism = 3;
  c.timeout_s = 0.5;
  c.max_retries = 1;
  LlmClient client(c);
  ReplayCache cache;
  EXPECT_EQ(client.complete("hi", cache), "server:hi:llama3-8b-instruct");
  EXPECT_EQ(client.complete("flaky", cache), "server:flaky:llama3-8b-instruct");
  EXPECT_EQ(code_of([&] { client.complete("slow", cache); }), ErrorCode::Timeout);

  std::vector<std::string> prompts;
  for (int i = 0; i < 12; ++i) prompts.push_back("b" + std::to_string(i));
  const auto out = client.complete_batch(prompts, cache);
  for (std::size_t i = 0; i < out.size(); ++i) EXPECT_EQ(out[i].text, "server:" + prompts[i] + ":llama3-8b-instruct");
  EXPECT_LE(peak.load(), 3);
  {
    std::lock_guard lock(seen_mutex);
    for (const auto& a : auths) EXPECT_EQ(a, "Bearer secret-key");
    for (const auto& p : paths) EXPECT_EQ(p, "/v1/chat/completions");
  }

  server.stop();
  th.join();
  c.base_url = "http://127.0.0.1:" + std::to_string(port);
  c.max_retries = 0;
  try {
    LlmClient(c).complete("gone", cache);
    FAIL();
  } catch (const EndpointError& e) {
    EXPECT_EQ(e.status(), 0);
  }
}
