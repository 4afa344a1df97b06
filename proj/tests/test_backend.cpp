#include <doctest.h>

#include <httplib.h>

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <random>
#include <thread>

#include "masca/backend.hpp"

using namespace masca;
using json = nlohmann::json;

namespace {

ChatRequest simple_request(const std::string& tag = "risk_modeler") {
  ChatRequest request;
  request.model_id = "gpt-4o";
  request.messages = {{"system", "be terse"}, {"user", "hello"}};
  request.tag = tag;
  return request;
}

// ---------------------------------------------------------------------------
// Brute-force extraction oracle: starting at the first '{', try every end
// position until one parses. No shared code with the scanner under test.
// ---------------------------------------------------------------------------
std::optional<json> brute_force_first_object(const std::string& text) {
  const std::size_t open = text.find('{');
  if (open == std::string::npos) return std::nullopt;
  for (std::size_t end = open; end < text.size(); ++end) {
    if (text[end] != '}') continue;
    const std::string candidate = text.substr(open, end - open + 1);
    if (json::accept(candidate)) {
      return json::parse(candidate);
    }
  }
  return std::nullopt;
}

json random_json_object(std::mt19937& rng, int depth = 0) {
  std::uniform_int_distribution<int> width(1, 4);
  std::uniform_int_distribution<int> kind(0, depth < 2 ? 4 : 2);
  std::uniform_real_distribution<double> num(-100.0, 100.0);
  json obj = json::object();
  const int n = width(rng);
  for (int i = 0; i < n; ++i) {
    const std::string key = "k" + std::to_string(i) + "_" + std::to_string(rng() % 100);
    switch (kind(rng)) {
      case 0: obj[key] = num(rng); break;
      case 1: obj[key] = rng() % 2 == 0; break;
      case 2: obj[key] = "s with spaces, a \"quote\" and a } brace";
      break;
      case 3: obj[key] = json::array({1, "two", 3.5}); break;
      default: obj[key] = random_json_object(rng, depth + 1); break;
    }
  }
  return obj;
}

}  // namespace

TEST_CASE("request hash covers reply-relevant fields and skips the tag") {
  ChatRequest a = simple_request("risk_modeler");
  ChatRequest b = simple_request("debt_analyst");
  CHECK(request_hash(a) == request_hash(b));

  ChatRequest hotter = a;
  hotter.temperature = 0.7;
  CHECK(request_hash(a) != request_hash(hotter));

  ChatRequest longer = a;
  longer.messages.push_back({"assistant", "reply"});
  CHECK(request_hash(a) != request_hash(longer));
}

TEST_CASE("scripted backend lookup order and miss behavior") {
  ScriptedBackend backend;
  backend.add("risk_modeler", "*", "wildcard reply");

  ChatRequest request = simple_request("risk_modeler");
  CHECK(backend.complete(request).text == "wildcard reply");

  SUBCASE("an exact hash entry wins over the wildcard") {
    backend.add("risk_modeler", request_hash(request), "exact reply");
    CHECK(backend.complete(request).text == "exact reply");
  }

  SUBCASE("a miss without default names the tag") {
    ChatRequest other = simple_request("reward_modeler");
    CHECK_THROWS_WITH_AS((void)backend.complete(other), doctest::Contains("reward_modeler"),
                         ScriptMissError);
  }

  SUBCASE("the default catches unmatched tags") {
    backend.set_default("fallback");
    CHECK(backend.complete(simple_request("reward_modeler")).text == "fallback");
  }

  SUBCASE("identical requests produce identical responses and a call log") {
    ChatResponse first = backend.complete(request);
    ChatResponse second = backend.complete(request);
    CHECK(first.text == second.text);
    CHECK(first.usage.prompt_tokens == second.usage.prompt_tokens);
    CHECK(backend.call_log().size() >= 2);
  }
}

TEST_CASE("response cache round-trips and short-circuits the backend") {
  const auto dir = std::filesystem::temp_directory_path() / "masca_cache_test";
  std::filesystem::remove_all(dir);

  ScriptedBackend backend;
  backend.add("risk_modeler", "*", "scripted text");
  ResponseCache cache(dir / "cache");
  CompletionService service(backend, &cache, 4);

  ChatRequest request = simple_request();
  ChatResponse first = service.complete(request);
  CHECK(!first.cached);
  ChatResponse second = service.complete(request);
  CHECK(second.cached);
  CHECK(second.latency_ms == 0.0);
  CHECK(second.text == first.text);
  CHECK(second.usage.prompt_tokens == first.usage.prompt_tokens);
  CHECK(backend.call_log().size() == 1);  // second hit never reached the backend

  SUBCASE("a reloaded cache keeps serving without the backend") {
    ResponseCache reloaded(dir / "cache");
    ScriptedBackend empty;  // no entries: any call would throw
    CompletionService replay(empty, &reloaded, 4);
    ChatResponse replayed = replay.complete(request);
    CHECK(replayed.cached);
    CHECK(replayed.text == first.text);
    CHECK(empty.call_log().empty());
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("extract_json handles fences, prose and absence") {
  CHECK(extract_json("```json\n{\"risk_score\":0.7}\n```").value ==
        json::parse("{\"risk_score\":0.7}"));
  CHECK(extract_json("I think {\"a\":{\"b\":1}} covers it").value ==
        json::parse("{\"a\":{\"b\":1}}"));
  CHECK_THROWS_AS((void)extract_json("no structured output"), ExtractionError);
  CHECK_THROWS_AS((void)extract_json("{\"unterminated\": true"), ExtractionError);
  CHECK_THROWS_AS((void)extract_json("{not json}"), ExtractionError);

  SUBCASE("braces inside strings do not end the object") {
    ExtractedJson got = extract_json(R"(reply: {"text": "a } inside", "x": 1} done)");
    CHECK(got.value["x"] == 1);
  }
  SUBCASE("multiple top-level objects return the first with a note") {
    ExtractedJson got = extract_json(R"({"first":1} and then {"second":2})");
    CHECK(got.value == json::parse("{\"first\":1}"));
    CHECK(got.multiple_objects);
  }
  SUBCASE("a single object carries no multiplicity note") {
    CHECK(!extract_json(R"({"only":1} trailing } prose)").multiple_objects);
  }
}

TEST_CASE("extract_json agrees with a brute-force scanner on a fuzz corpus") {
  std::mt19937 rng(7);
  for (int i = 0; i < 300; ++i) {
    json v = random_json_object(rng);
    const std::string text = "prefix prose without braces " + v.dump() + " suffix prose";
    ExtractedJson got = extract_json(text);
    auto want = brute_force_first_object(text);
    REQUIRE(want.has_value());
    CHECK(got.value == *want);
    CHECK(got.value == v);  // embedding round-trip
  }
}

TEST_CASE("live backend speaks the chat-completions wire format") {
  httplib::Server server;
  std::atomic<int> requests{0};
  std::atomic<int> failures_to_serve{0};
  std::string seen_auth;
  std::string seen_body;

  server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    ++requests;
    seen_auth = req.get_header_value("Authorization");
    seen_body = req.body;
    if (failures_to_serve > 0) {
      --failures_to_serve;
      res.status = 500;
      res.set_content("upstream exploded", "text/plain");
      return;
    }
    json reply = {
        {"choices", json::array({{{"message", {{"role", "assistant"}, {"content", "good"}}}}})},
        {"usage", {{"prompt_tokens", 12}, {"completion_tokens", 1}}}};
    res.set_content(reply.dump(), "application/json");
  });

  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread server_thread([&server] { server.listen_after_bind(); });
  while (!server.is_running()) std::this_thread::sleep_for(std::chrono::milliseconds(1));

  setenv("MASCA_TEST_KEY", "secret-token", 1);
  LiveBackendConfig config;
  config.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/v1/chat/completions";
  config.api_key_env = "MASCA_TEST_KEY";
  config.backoff_base_ms = 1;
  config.timeout_s = 5;

  SUBCASE("success parses text and usage") {
    LiveBackend backend(config);
    ChatResponse response = backend.complete(simple_request());
    CHECK(response.text == "good");
    CHECK(response.usage.prompt_tokens == 12);
    CHECK(response.usage.completion_tokens == 1);
    CHECK(response.latency_ms > 0.0);
    CHECK(seen_auth == "Bearer secret-token");
    json body = json::parse(seen_body);
    CHECK(body["model"] == "gpt-4o");
    CHECK(body["messages"][0]["role"] == "system");
    CHECK(body["temperature"] == 0.0);
    CHECK(body.contains("max_tokens"));
  }

  SUBCASE("transient 500s are retried with backoff until success") {
    failures_to_serve = 2;
    requests = 0;
    LiveBackend backend(config);
    CHECK(backend.complete(simple_request()).text == "good");
    CHECK(requests == 3);
  }

  SUBCASE("retry budget exhaustion surfaces the last status") {
    failures_to_serve = 99;
    LiveBackendConfig tight = config;
    tight.max_attempts = 3;
    LiveBackend backend(tight);
    CHECK_THROWS_WITH_AS((void)backend.complete(simple_request()),
                         doctest::Contains("3 attempts"), BackendError);
  }

  SUBCASE("missing credential is reported before any network call") {
    LiveBackendConfig no_key = config;
    no_key.api_key_env = "MASCA_DEFINITELY_UNSET_ENV";
    LiveBackend backend(no_key);
    requests = 0;
    CHECK_THROWS_WITH_AS((void)backend.complete(simple_request()),
                         doctest::Contains("MASCA_DEFINITELY_UNSET_ENV"), BackendError);
    CHECK(requests == 0);
  }

  server.stop();
  server_thread.join();
}

TEST_CASE("authentication failures are terminal, not retried") {
  httplib::Server server;
  std::atomic<int> requests{0};
  server.Post("/v1/chat/completions", [&](const httplib::Request&, httplib::Response& res) {
    ++requests;
    res.status = 401;
    res.set_content("{\"error\":\"bad key\"}", "application/json");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread server_thread([&server] { server.listen_after_bind(); });
  while (!server.is_running()) std::this_thread::sleep_for(std::chrono::milliseconds(1));

  setenv("MASCA_TEST_KEY", "secret-token", 1);
  LiveBackendConfig config;
  config.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/v1/chat/completions";
  config.api_key_env = "MASCA_TEST_KEY";
  config.backoff_base_ms = 1;
  LiveBackend backend(config);
  CHECK_THROWS_WITH_AS((void)backend.complete(simple_request()),
                       doctest::Contains("authentication"), BackendError);
  CHECK(requests == 1);

  server.stop();
  server_thread.join();
}

TEST_CASE("completion service rejects malformed requests") {
  ScriptedBackend backend;
  backend.set_default("x");
  CompletionService service(backend, nullptr, 1);

  ChatRequest empty;
  empty.tag = "t";
  CHECK_THROWS_AS((void)service.complete(empty), BackendError);

  ChatRequest assistant_first = simple_request();
  assistant_first.messages.front().role = "assistant";
  CHECK_THROWS_AS((void)service.complete(assistant_first), BackendError);
  CHECK(backend.call_log().empty());

  ChatRequest user_first = simple_request();
  user_first.messages.front().role = "user";
  CHECK(service.complete(user_first).text == "x");
}

TEST_CASE("completion service bounds in-flight requests") {
  // A slow backend that records the concurrency high-water mark.
  struct SlowBackend : ChatBackend {
    std::atomic<int> in_flight{0};
    std::atomic<int> peak{0};
    ChatResponse complete(const ChatRequest&) override {
      const int now = ++in_flight;
      int snapshot = peak.load();
      while (now > snapshot && !peak.compare_exchange_weak(snapshot, now)) {
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(5));
      --in_flight;
      return ChatResponse{"ok", {}, false, 1.0, 1.0};
    }
  };

  SlowBackend backend;
  CompletionService service(backend, nullptr, 2);
  std::vector<std::thread> threads;
  for (int i = 0; i < 8; ++i) {
    threads.emplace_back([&service, i] {
      ChatRequest request = simple_request("t" + std::to_string(i));
      (void)service.complete(request);
    });
  }
  for (auto& t : threads) t.join();
  CHECK(backend.peak.load() <= 2);
}
