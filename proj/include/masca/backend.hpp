#pragma once

#include <nlohmann/json.hpp>

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "masca/util.hpp"

namespace masca {

struct ChatMessage {
  std::string role;  // system | user | assistant
  std::string content;
};

struct ChatRequest {
  std::string model_id;
  std::vector<ChatMessage> messages;
  double temperature = 0.0;
  int max_tokens = 1024;
  std::string tag;  // agent role; used for script lookup and audit, not caching
};

struct TokenUsage {
  long prompt_tokens = 0;
  long completion_tokens = 0;
};

struct ChatResponse {
  std::string text;
  TokenUsage usage;
  bool cached = false;
  double latency_ms = 0.0;  // 0 for cached and scripted responses
  /// Latency of the call that originally produced this text. Stable across
  /// cache replays, so transcripts stay byte-identical.
  double recorded_latency_ms = 0.0;
};

/// Cache key over everything that influences the reply. The tag is audit
/// metadata and deliberately excluded.
std::string request_hash(const ChatRequest& request);

class ChatBackend {
 public:
  virtual ~ChatBackend() = default;
  virtual ChatResponse complete(const ChatRequest& request) = 0;
};

class ScriptMissError : public BackendError {
 public:
  using BackendError::BackendError;
};

/// Deterministic replay backend. Lookup order: exact (tag, request hash),
/// then (tag, "*"), then the script-wide default; a miss is an error.
class ScriptedBackend : public ChatBackend {
 public:
  ScriptedBackend();
  static ScriptedBackend from_json_text(const std::string& text);
  static ScriptedBackend from_file(const std::filesystem::path& path);

  ScriptedBackend(ScriptedBackend&&) = default;
  ScriptedBackend& operator=(ScriptedBackend&&) = default;

  void add(const std::string& tag, const std::string& request_hash_or_wildcard,
           std::string response_text);
  void set_default(std::string response_text);

  ChatResponse complete(const ChatRequest& request) override;

  /// Tags in call order; thread-safe. Used by structural tests.
  std::vector<std::string> call_log() const;
  /// Full requests in call order; thread-safe.
  std::vector<ChatRequest> request_log() const;

 private:
  struct CallLog {
    mutable std::mutex mutex;
    std::vector<std::string> calls;
    std::vector<ChatRequest> requests;
  };

  std::map<std::pair<std::string, std::string>, std::string> script_;
  std::optional<std::string> default_;
  std::unique_ptr<CallLog> log_;
};

struct LiveBackendConfig {
  std::string endpoint;  // full chat-completions URL, e.g. https://host/v1/chat/completions
  std::string api_key_env = "MASCA_API_KEY";
  int max_attempts = 3;
  int backoff_base_ms = 500;
  int timeout_s = 120;
};

/// OpenAI-compatible chat-completions client with bounded retries and
/// exponential backoff on transient failures.
class LiveBackend : public ChatBackend {
 public:
  explicit LiveBackend(LiveBackendConfig config);
  ChatResponse complete(const ChatRequest& request) override;

 private:
  LiveBackendConfig config_;
  std::string scheme_host_;  // "https://host[:port]"
  std::string path_;         // "/v1/chat/completions"
};

/// One JSON file per entry under `dir`, named by request hash. Entries are
/// human-inspectable and carry the originating tag and latency.
class ResponseCache {
 public:
  explicit ResponseCache(std::filesystem::path dir);

  std::optional<ChatResponse> lookup(const ChatRequest& request) const;
  void store(const ChatRequest& request, const ChatResponse& response);

 private:
  std::filesystem::path dir_;
  mutable std::mutex mutex_;
};

/// Front door for agent calls: cache check, concurrency limiting, backend
/// dispatch, cache fill. Safe for concurrent use.
class CompletionService {
 public:
  CompletionService(ChatBackend& backend, ResponseCache* cache, int max_in_flight = 4);

  ChatResponse complete(const ChatRequest& request);

 private:
  ChatBackend& backend_;
  ResponseCache* cache_;
  std::mutex slots_mutex_;
  std::condition_variable slots_cv_;
  int free_slots_;
};

class ExtractionError : public MascaError {
 public:
  using MascaError::MascaError;
};

struct ExtractedJson {
  nlohmann::json value;
  /// Set when the text contained more than one top-level object; the first
  /// one is returned.
  bool multiple_objects = false;
};

/// Pulls the first balanced top-level JSON object out of model text,
/// ignoring code fences and surrounding prose.
ExtractedJson extract_json(const std::string& text);

}  // namespace masca
