#include "masca/backend.hpp"

#include <httplib.h>

#include <chrono>
#include <cstdlib>
#include <sstream>
#include <thread>

namespace masca {

using json = nlohmann::json;

std::string request_hash(const ChatRequest& request) {
  json canonical;
  canonical["model_id"] = request.model_id;
  canonical["temperature"] = request.temperature;
  canonical["max_tokens"] = request.max_tokens;
  json messages = json::array();
  for (const auto& m : request.messages) {
    messages.push_back({{"role", m.role}, {"content", m.content}});
  }
  canonical["messages"] = std::move(messages);
  return sha256_hex(canonical.dump());
}

namespace {

long approx_tokens(std::size_t chars) { return static_cast<long>(chars / 4); }

std::size_t total_message_chars(const ChatRequest& request) {
  std::size_t n = 0;
  for (const auto& m : request.messages) n += m.content.size();
  return n;
}

}  // namespace

ScriptedBackend::ScriptedBackend() : log_(std::make_unique<CallLog>()) {}

ScriptedBackend ScriptedBackend::from_json_text(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& ex) {
    throw ConfigError(std::string("script: invalid JSON: ") + ex.what());
  }
  ScriptedBackend backend;
  if (doc.contains("entries")) {
    for (const auto& entry : doc["entries"]) {
      backend.add(entry.at("tag").get<std::string>(), entry.value("match", "*"),
                  entry.at("text").get<std::string>());
    }
  }
  if (doc.contains("default") && !doc["default"].is_null()) {
    backend.set_default(doc["default"].get<std::string>());
  }
  return backend;
}

ScriptedBackend ScriptedBackend::from_file(const std::filesystem::path& path) {
  return from_json_text(read_file(path));
}

void ScriptedBackend::add(const std::string& tag, const std::string& request_hash_or_wildcard,
                          std::string response_text) {
  script_[{tag, request_hash_or_wildcard}] = std::move(response_text);
}

void ScriptedBackend::set_default(std::string response_text) {
  default_ = std::move(response_text);
}

ChatResponse ScriptedBackend::complete(const ChatRequest& request) {
  const std::string hash = request_hash(request);
  const std::string* text = nullptr;
  {
    std::lock_guard<std::mutex> lock(log_->mutex);
    log_->calls.push_back(request.tag);
    log_->requests.push_back(request);
    if (auto it = script_.find({request.tag, hash}); it != script_.end()) {
      text = &it->second;
    } else if (auto wild = script_.find({request.tag, "*"}); wild != script_.end()) {
      text = &wild->second;
    } else if (default_) {
      text = &*default_;
    }
  }
  if (!text) {
    throw ScriptMissError("script miss: no entry for tag \"" + request.tag +
                          "\" and no default");
  }
  ChatResponse response;
  response.text = *text;
  response.usage.prompt_tokens = approx_tokens(total_message_chars(request));
  response.usage.completion_tokens = approx_tokens(text->size());
  return response;
}

std::vector<std::string> ScriptedBackend::call_log() const {
  std::lock_guard<std::mutex> lock(log_->mutex);
  return log_->calls;
}

std::vector<ChatRequest> ScriptedBackend::request_log() const {
  std::lock_guard<std::mutex> lock(log_->mutex);
  return log_->requests;
}

LiveBackend::LiveBackend(LiveBackendConfig config) : config_(std::move(config)) {
  const std::string& url = config_.endpoint;
  auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) {
    throw ConfigError("endpoint must include a scheme: " + url);
  }
  auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) {
    scheme_host_ = url;
    path_ = "/v1/chat/completions";
  } else {
    scheme_host_ = url.substr(0, path_start);
    path_ = url.substr(path_start);
  }
}

ChatResponse LiveBackend::complete(const ChatRequest& request) {
  const char* key = std::getenv(config_.api_key_env.c_str());
  if (!key || std::string(key).empty()) {
    throw BackendError("missing credential: environment variable " + config_.api_key_env +
                       " is not set");
  }

  json body;
  body["model"] = request.model_id;
  json messages = json::array();
  for (const auto& m : request.messages) {
    messages.push_back({{"role", m.role}, {"content", m.content}});
  }
  body["messages"] = std::move(messages);
  body["temperature"] = request.temperature;
  body["max_tokens"] = request.max_tokens;
  const std::string payload = body.dump();

  std::string last_error;
  for (int attempt = 0; attempt < config_.max_attempts; ++attempt) {
    if (attempt > 0) {
      const auto delay = std::chrono::milliseconds(config_.backoff_base_ms) * (1L << (attempt - 1));
      std::this_thread::sleep_for(delay);
    }

    httplib::Client client(scheme_host_);
    client.set_connection_timeout(config_.timeout_s, 0);
    client.set_read_timeout(config_.timeout_s, 0);
    client.set_write_timeout(config_.timeout_s, 0);
    httplib::Headers headers = {{"Authorization", std::string("Bearer ") + key}};

    const auto start = std::chrono::steady_clock::now();
    auto res = client.Post(path_, headers, payload, "application/json");
    const double latency_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
            .count();

    if (!res) {
      last_error = "connection error: " + httplib::to_string(res.error());
      continue;
    }

    if (res->status == 200) {
      json doc;
      try {
        doc = json::parse(res->body);
      } catch (const json::exception& ex) {
        throw BackendError(std::string("malformed completion response: ") + ex.what());
      }
      ChatResponse response;
      try {
        response.text = doc.at("choices").at(0).at("message").at("content").get<std::string>();
      } catch (const json::exception& ex) {
        throw BackendError(std::string("completion response missing message content: ") +
                           ex.what());
      }
      if (doc.contains("usage")) {
        response.usage.prompt_tokens = doc["usage"].value("prompt_tokens", 0L);
        response.usage.completion_tokens = doc["usage"].value("completion_tokens", 0L);
      }
      response.latency_ms = latency_ms;
      response.recorded_latency_ms = latency_ms;
      return response;
    }

    const std::string excerpt = res->body.substr(0, 200);
    if (res->status == 401 || res->status == 403) {
      throw BackendError("authentication failure (HTTP " + std::to_string(res->status) +
                         "): " + excerpt);
    }
    const bool transient =
        res->status == 408 || res->status == 409 || res->status == 429 || res->status >= 500;
    if (!transient) {
      throw BackendError("backend rejected request (HTTP " + std::to_string(res->status) +
                         "): " + excerpt);
    }
    last_error = "HTTP " + std::to_string(res->status) + ": " + excerpt;
  }
  throw BackendError("backend failed after " + std::to_string(config_.max_attempts) +
                     " attempts; last error: " + last_error);
}

ResponseCache::ResponseCache(std::filesystem::path dir) : dir_(std::move(dir)) {
  std::filesystem::create_directories(dir_);
}

std::optional<ChatResponse> ResponseCache::lookup(const ChatRequest& request) const {
  const auto path = dir_ / (request_hash(request) + ".json");
  std::lock_guard<std::mutex> lock(mutex_);
  if (!std::filesystem::exists(path)) {
    return std::nullopt;
  }
  json doc;
  try {
    doc = json::parse(read_file(path));
  } catch (const std::exception&) {
    return std::nullopt;  // corrupt entry behaves as a miss
  }
  ChatResponse response;
  response.text = doc.at("response").at("text").get<std::string>();
  response.usage.prompt_tokens = doc["response"]["usage"].value("prompt_tokens", 0L);
  response.usage.completion_tokens = doc["response"]["usage"].value("completion_tokens", 0L);
  response.cached = true;
  response.latency_ms = 0.0;
  response.recorded_latency_ms = doc["response"].value("latency_ms", 0.0);
  return response;
}

void ResponseCache::store(const ChatRequest& request, const ChatResponse& response) {
  json doc;
  doc["tag"] = request.tag;
  json req;
  req["model_id"] = request.model_id;
  req["temperature"] = request.temperature;
  req["max_tokens"] = request.max_tokens;
  json messages = json::array();
  for (const auto& m : request.messages) {
    messages.push_back({{"role", m.role}, {"content", m.content}});
  }
  req["messages"] = std::move(messages);
  doc["request"] = std::move(req);
  doc["response"] = {{"text", response.text},
                     {"usage",
                      {{"prompt_tokens", response.usage.prompt_tokens},
                       {"completion_tokens", response.usage.completion_tokens}}},
                     {"latency_ms", response.recorded_latency_ms}};
  const auto path = dir_ / (request_hash(request) + ".json");
  std::lock_guard<std::mutex> lock(mutex_);
  write_file_atomic(path, doc.dump(2) + "\n");
}

CompletionService::CompletionService(ChatBackend& backend, ResponseCache* cache,
                                     int max_in_flight)
    : backend_(backend), cache_(cache), free_slots_(max_in_flight > 0 ? max_in_flight : 1) {}

ChatResponse CompletionService::complete(const ChatRequest& request) {
  if (request.messages.empty()) {
    throw BackendError("chat request has no messages (tag \"" + request.tag + "\")");
  }
  const std::string& first_role = request.messages.front().role;
  if (first_role != "system" && first_role != "user") {
    throw BackendError("chat request must open with a system or user message, got \"" +
                       first_role + "\"");
  }
  if (cache_) {
    if (auto hit = cache_->lookup(request)) {
      return *hit;
    }
  }
  {
    std::unique_lock<std::mutex> lock(slots_mutex_);
    slots_cv_.wait(lock, [this] { return free_slots_ > 0; });
    --free_slots_;
  }
  ChatResponse response;
  try {
    response = backend_.complete(request);
  } catch (...) {
    {
      std::lock_guard<std::mutex> lock(slots_mutex_);
      ++free_slots_;
    }
    slots_cv_.notify_one();
    throw;
  }
  {
    std::lock_guard<std::mutex> lock(slots_mutex_);
    ++free_slots_;
  }
  slots_cv_.notify_one();
  if (cache_) {
    cache_->store(request, response);
  }
  return response;
}

namespace {

std::string strip_code_fences(const std::string& text) {
  std::ostringstream out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).rfind("```", 0) == 0) continue;
    out << line << "\n";
  }
  return out.str();
}

struct BraceSpan {
  bool found = false;
  bool terminated = false;
  std::size_t open = 0;
  std::size_t close = 0;
};

/// First '{' at or after `from`, with its string-aware balanced match.
BraceSpan find_balanced(const std::string& text, std::size_t from) {
  BraceSpan span;
  std::size_t open = text.find('{', from);
  if (open == std::string::npos) return span;
  span.found = true;
  span.open = open;

  int depth = 0;
  bool in_string = false;
  bool escaped = false;
  for (std::size_t i = open; i < text.size(); ++i) {
    const char c = text[i];
    if (in_string) {
      if (escaped) {
        escaped = false;
      } else if (c == '\\') {
        escaped = true;
      } else if (c == '"') {
        in_string = false;
      }
      continue;
    }
    if (c == '"') {
      in_string = true;
    } else if (c == '{') {
      ++depth;
    } else if (c == '}') {
      --depth;
      if (depth == 0) {
        span.terminated = true;
        span.close = i;
        return span;
      }
    }
  }
  return span;
}

}  // namespace

ExtractedJson extract_json(const std::string& text) {
  const std::string stripped = strip_code_fences(text);
  BraceSpan span = find_balanced(stripped, 0);
  if (!span.found) {
    throw ExtractionError("no JSON object found in model output");
  }
  if (!span.terminated) {
    throw ExtractionError("unterminated JSON object in model output");
  }
  const std::string candidate = stripped.substr(span.open, span.close - span.open + 1);
  ExtractedJson result;
  try {
    result.value = json::parse(candidate);
  } catch (const json::exception& ex) {
    throw ExtractionError(std::string("parse failure inside candidate object: ") + ex.what());
  }

  BraceSpan next = find_balanced(stripped, span.close + 1);
  if (next.found && next.terminated) {
    const std::string second = stripped.substr(next.open, next.close - next.open + 1);
    // Trailing braces that are not JSON are just prose.
    result.multiple_objects = json::accept(second);
  }
  return result;
}

}  // namespace masca
