#include "tcde/llm_client.hpp"

#include <cctype>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <mutex>
#include <semaphore>
#include <sstream>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "tcde/errors.hpp"
#include "tcde/hash.hpp"
#include "tcde/log.hpp"

namespace tcde::llm {

namespace {

using nlohmann::json;

std::string rstrip(std::string s) {
  while (!s.empty() &&
         (s.back() == ' ' || s.back() == '\t' || s.back() == '\r' ||
          s.back() == '\n')) {
    s.pop_back();
  }
  return s;
}

// Looks for "generate <N>" / "identify <N>" in the prompt.
int parse_requested_n(const std::string& prompt) {
  for (const char* keyword : {"generate ", "identify "}) {
    std::size_t pos = 0;
    const std::size_t klen = std::char_traits<char>::length(keyword);
    while ((pos = prompt.find(keyword, pos)) != std::string::npos) {
      std::size_t digits = pos + klen;
      if (digits < prompt.size() &&
          std::isdigit(static_cast<unsigned char>(prompt[digits]))) {
        int n = 0;
        auto [ptr, ec] = std::from_chars(
            prompt.data() + digits, prompt.data() + prompt.size(), n);
        (void)ptr;
        if (ec == std::errc()) return n;
      }
      pos += 1;
    }
  }
  log::warn("mock provider: no topic count found in prompt " +
            fnv1a64_hex8(prompt) + ", defaulting to 5");
  return 5;
}

std::string resolve_credential(const std::string& env_name) {
  if (env_name.empty()) return "";
  const char* value = std::getenv(env_name.c_str());
  return value == nullptr ? "" : value;
}

}  // namespace

std::string mock_complete(const std::string& prompt) {
  int n = parse_requested_n(prompt);
  std::string h8 = fnv1a64_hex8(prompt);
  std::string out;
  for (int i = 1; i <= n; ++i) {
    if (i > 1) out += '\n';
    out += std::to_string(i) + ". topic-" + h8 + "-" + std::to_string(i);
  }
  return out;
}

MockLlmClient::MockLlmClient(std::vector<MockScriptEntry> script)
    : script_(std::move(script)) {
  std::string digest_input;
  for (const auto& entry : script_) {
    digest_input += entry.contains;
    digest_input += '\x1f';
    digest_input += entry.response;
    digest_input += '\x1e';
  }
  id_ = "mock-" + fnv1a64_hex8(digest_input);
}

std::unique_ptr<MockLlmClient> MockLlmClient::from_script_file(
    const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open mock script: " + path.string());
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded() || !j.is_array()) {
    throw ConfigError("mock script must be a JSON array: " + path.string());
  }
  std::vector<MockScriptEntry> script;
  for (const auto& item : j) {
    if (!item.is_object() || !item.contains("contains") ||
        !item.contains("response") || !item["contains"].is_string() ||
        !item["response"].is_string()) {
      throw ConfigError(
          "mock script entries need string fields \"contains\" and "
          "\"response\": " +
          path.string());
    }
    script.push_back(MockScriptEntry{item["contains"].get<std::string>(),
                                     item["response"].get<std::string>()});
  }
  return MockLlmClient(std::move(script));
}

std::string MockLlmClient::complete(const CompletionRequest& request) {
  stats_.calls.fetch_add(1);
  stats_.attempts.fetch_add(1);
  for (const auto& entry : script_) {
    if (!entry.contains.empty() &&
        request.prompt.find(entry.contains) != std::string::npos) {
      return rstrip(entry.response);
    }
  }
  return rstrip(mock_complete(request.prompt));
}

std::string chat_request_body(const CompletionRequest& request) {
  json body = {
      {"model", request.model_id},
      {"messages", json::array({json{{"role", "user"},
                                     {"content", request.prompt}}})},
      {"temperature", request.temperature},
      {"max_tokens", request.max_output_tokens},
  };
  return body.dump();
}

std::string parse_chat_response(const std::string& body,
                                const std::string& prompt_fingerprint) {
  json j = json::parse(body, nullptr, false);
  if (!j.is_discarded() && j.is_object() && j.contains("choices") &&
      j["choices"].is_array() && !j["choices"].empty()) {
    const json& first = j["choices"][0];
    if (first.is_object() && first.contains("message") &&
        first["message"].is_object() && first["message"].contains("content") &&
        first["message"]["content"].is_string()) {
      return first["message"]["content"].get<std::string>();
    }
  }
  throw ProtocolError("malformed provider response (prompt " +
                      prompt_fingerprint + ")");
}

struct HttpLlmClient::Impl {
  ProviderConfig config;
  Transport transport;
  Sleeper sleeper;
  std::counting_semaphore<> slots;
  std::mutex rate_mu;
  std::chrono::steady_clock::time_point next_slot =
      std::chrono::steady_clock::now();

  Impl(ProviderConfig cfg, Transport tr, Sleeper sl)
      : config(std::move(cfg)),
        transport(std::move(tr)),
        sleeper(std::move(sl)),
        slots(std::max(1, config.max_concurrent)) {
    if (!sleeper) {
      sleeper = [](std::chrono::milliseconds d) {
        std::this_thread::sleep_for(d);
      };
    }
  }

  void wait_for_rate_slot() {
    if (config.requests_per_second <= 0.0) return;
    auto interval = std::chrono::duration_cast<
        std::chrono::steady_clock::duration>(
        std::chrono::duration<double>(1.0 / config.requests_per_second));
    std::chrono::milliseconds wait{0};
    {
      std::lock_guard<std::mutex> lock(rate_mu);
      auto now = std::chrono::steady_clock::now();
      if (next_slot > now) {
        wait = std::chrono::ceil<std::chrono::milliseconds>(next_slot - now);
      }
      next_slot = std::max(now, next_slot) + interval;
    }
    if (wait.count() > 0) sleeper(wait);
  }
};

namespace {

// Production transport over cpp-httplib. Splits the endpoint into
// scheme://authority and path once per request.
Transport make_http_transport(const std::string& endpoint) {
  return [endpoint](const CompletionRequest& request,
                    const std::string& credential) -> TransportResponse {
    auto scheme_end = endpoint.find("://");
    if (scheme_end == std::string::npos) {
      return TransportResponse{0, "", false,
                               "endpoint must include a scheme"};
    }
    auto path_start = endpoint.find('/', scheme_end + 3);
    std::string base = path_start == std::string::npos
                           ? endpoint
                           : endpoint.substr(0, path_start);
    std::string path =
        path_start == std::string::npos ? "/" : endpoint.substr(path_start);

    httplib::Client client(base);
    auto secs = std::chrono::duration_cast<std::chrono::seconds>(
        request.timeout);
    auto rem_usec = std::chrono::duration_cast<std::chrono::microseconds>(
        request.timeout - secs);
    client.set_connection_timeout(secs.count(), rem_usec.count());
    client.set_read_timeout(secs.count(), rem_usec.count());
    client.set_write_timeout(secs.count(), rem_usec.count());

    httplib::Headers headers;
    if (!credential.empty()) {
      headers.emplace("Authorization", "Bearer " + credential);
    }
    auto res = client.Post(path, headers, chat_request_body(request),
                           "application/json");
    if (!res) {
      TransportResponse tr;
      tr.status = 0;
      tr.timed_out = res.error() == httplib::Error::ConnectionTimeout ||
                     res.error() == httplib::Error::Read;
      tr.error = httplib::to_string(res.error());
      return tr;
    }
    return TransportResponse{res->status, res->body, false, ""};
  };
}

struct SlotGuard {
  std::counting_semaphore<>& slots;
  explicit SlotGuard(std::counting_semaphore<>& s) : slots(s) {
    slots.acquire();
  }
  ~SlotGuard() { slots.release(); }
};

}  // namespace

HttpLlmClient::HttpLlmClient(ProviderConfig config, std::string model_id)
    : model_id_(std::move(model_id)) {
  if (config.endpoint.empty()) {
    throw ConfigError("llm endpoint is required for the HTTP client");
  }
  Transport transport = make_http_transport(config.endpoint);
  impl_ = std::make_unique<Impl>(std::move(config), std::move(transport),
                                 Sleeper{});
}

HttpLlmClient::HttpLlmClient(ProviderConfig config, std::string model_id,
                             Transport transport, Sleeper sleeper)
    : model_id_(std::move(model_id)) {
  impl_ = std::make_unique<Impl>(std::move(config), std::move(transport),
                                 std::move(sleeper));
}

HttpLlmClient::~HttpLlmClient() = default;

std::string HttpLlmClient::complete(const CompletionRequest& request) {
  stats_.calls.fetch_add(1);
  SlotGuard guard(impl_->slots);
  const std::string fingerprint = fnv1a64_hex8(request.prompt);
  const std::string credential =
      resolve_credential(impl_->config.credential_env);

  TransportResponse last;
  const int max_retries = std::max(0, impl_->config.max_retries);
  for (int attempt = 0; attempt <= max_retries; ++attempt) {
    impl_->wait_for_rate_slot();
    stats_.attempts.fetch_add(1);
    last = impl_->transport(request, credential);
    if (last.status == 200) {
      return rstrip(parse_chat_response(last.body, fingerprint));
    }
    bool transient = last.timed_out || last.status == 0 ||
                     last.status == 429 || last.status >= 500;
    if (!transient) {
      throw ProviderError("provider returned HTTP " +
                          std::to_string(last.status) + " (prompt " +
                          fingerprint + ")");
    }
    if (attempt < max_retries) {
      auto delay = impl_->config.backoff_base * (1LL << attempt);
      log::debug("transient provider failure (prompt " + fingerprint +
                 "), retrying in " + std::to_string(delay.count()) + "ms");
      impl_->sleeper(delay);
    }
  }

  std::string detail = last.status > 0
                           ? "HTTP " + std::to_string(last.status)
                           : (last.error.empty() ? "transport failure"
                                                 : last.error);
  std::string msg = "provider unavailable after " +
                    std::to_string(max_retries + 1) + " attempts: " + detail +
                    " (prompt " + fingerprint + ")";
  if (last.timed_out) throw TimeoutError(msg);
  throw RetryExhaustedError(msg);
}

}  // namespace tcde::llm
