#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace tcde::llm {

struct CompletionRequest {
  std::string model_id;
  std::string prompt;
  double temperature = 0.0;
  int max_output_tokens = 512;
  std::chrono::milliseconds timeout{30000};
};

struct ProviderConfig {
  std::string endpoint;  // e.g. https://host/v1/chat/completions
  // Name of the environment variable holding the API key. The key itself is
  // read at request time and is never stored, logged, or serialized.
  std::string credential_env = "TCDE_LLM_API_KEY";
  int max_retries = 3;  // retries after the first attempt
  std::chrono::milliseconds backoff_base{250};
  int max_concurrent = 8;
  double requests_per_second = 0.0;  // 0 disables rate limiting
};

struct ClientStats {
  std::atomic<std::uint64_t> calls{0};     // completed complete() invocations
  std::atomic<std::uint64_t> attempts{0};  // transport attempts, incl. retries
};

class LlmClient {
 public:
  virtual ~LlmClient() = default;

  // Returns the completion text with trailing whitespace stripped. Throws
  // ProviderError subclasses on failure; messages identify the prompt by
  // hash only.
  virtual std::string complete(const CompletionRequest& request) = 0;

  virtual std::string model_id() const = 0;

  const ClientStats& stats() const { return stats_; }
  void reset_stats() {
    stats_.calls = 0;
    stats_.attempts = 0;
  }

 protected:
  ClientStats stats_;
};

// Pure function of the prompt: emits N enumerated lines
//   i. topic-<h8>-<i>
// where h8 is the first 8 hex digits of fnv1a64(prompt) and N is parsed from
// "generate <N>" or "identify <N>" in the prompt (default 5 with a warning).
// Distinct prompts therefore yield distinct topics, and repeated calls are
// byte-identical.
std::string mock_complete(const std::string& prompt);

struct MockScriptEntry {
  std::string contains;  // first entry whose substring matches wins
  std::string response;
};

// Offline deterministic stand-in for a completion endpoint. With no script
// it answers via mock_complete; scripted entries override matching prompts
// so tests can supply crafted topics. Scripted clients advertise a distinct
// model id ("mock-" + script digest) so their cache entries cannot collide
// with plain mock output.
class MockLlmClient : public LlmClient {
 public:
  MockLlmClient() = default;
  explicit MockLlmClient(std::vector<MockScriptEntry> script);

  // JSON file: [{"contains": ..., "response": ...}, ...]
  static std::unique_ptr<MockLlmClient> from_script_file(
      const std::filesystem::path& path);

  std::string complete(const CompletionRequest& request) override;
  std::string model_id() const override { return id_; }

 private:
  std::vector<MockScriptEntry> script_;
  std::string id_ = "mock";
};

// Transport abstraction so retry/backoff/rate-limit behaviour is testable
// without a network. status==0 means the request never completed (connect
// failure or timeout).
struct TransportResponse {
  int status = 0;
  std::string body;
  bool timed_out = false;
  std::string error;  // transport-level diagnostics, no payload
};
using Transport = std::function<TransportResponse(const CompletionRequest&,
                                                  const std::string& credential)>;
using Sleeper = std::function<void(std::chrono::milliseconds)>;

// Chat-completions HTTP client with bounded concurrency, optional
// request-rate limiting, and exponential backoff on transient failures
// (HTTP 429, 5xx, timeouts, connect errors). Non-transient HTTP statuses
// fail immediately; a 200 with an unexpected payload raises ProtocolError.
class HttpLlmClient : public LlmClient {
 public:
  HttpLlmClient(ProviderConfig config, std::string model_id);
  // Test constructor with injectable transport and sleeper.
  HttpLlmClient(ProviderConfig config, std::string model_id,
                Transport transport, Sleeper sleeper = {});
  ~HttpLlmClient() override;

  std::string complete(const CompletionRequest& request) override;
  std::string model_id() const override { return model_id_; }

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  std::string model_id_;
};

// Serializes a request into the chat-completions wire format. Exposed for
// tests that pin the payload shape.
std::string chat_request_body(const CompletionRequest& request);

// Extracts choices[0].message.content; throws ProtocolError otherwise.
std::string parse_chat_response(const std::string& body,
                                const std::string& prompt_fingerprint);

}  // namespace tcde::llm
