#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "tcde/corpus.hpp"
#include "tcde/llm_client.hpp"

namespace tcde::expansion {

enum class Kind { tqe, tde };

std::string_view kind_name(Kind kind);  // "tqe" / "tde"

// Bump these when a template changes so stale cache entries are bypassed.
inline constexpr std::string_view kTqePromptVersion = "tqe-v1";
inline constexpr std::string_view kTdePromptVersion = "tde-v1";

inline constexpr std::size_t kDefaultDocCharBudget = 8000;

// Query-side prompt: asks for n diverse topic-focused pseudo-documents.
std::string build_tqe_prompt(const Query& query, int n);

// Document-side prompt: asks for n abstract topics, one sentence each. The
// document body is truncated to char_budget bytes (backing off to a UTF-8
// boundary) before insertion.
std::string build_tde_prompt(const Document& doc, int n,
                             std::size_t char_budget = kDefaultDocCharBudget);

struct TopicSet {
  std::vector<std::string> topics;
  Kind kind = Kind::tqe;
  int requested_n = 0;
  std::string model_id;
  std::string prompt_version;
};

// Splits raw completion text into topics. Recognizes "1.", "1)", "-", "*"
// and bullet (U+2022) enumerators; otherwise every non-empty line is a
// topic. Keeps at most requested_n topics (warning when the provider over-
// or under-delivers). Throws EmptyExpansionError when nothing usable
// remains.
TopicSet parse_topics(const std::string& raw, int requested_n, Kind kind);

struct ExpandedQuery {
  Query source;
  std::optional<TopicSet> topic_set;
  std::string surface_text;  // what retrieval actually sees
  int repeat_factor = 1;
};

struct ExpandedDocument {
  Document source;
  std::optional<TopicSet> topic_set;
  std::string surface_text;
};

// surface = query text repeated repeat_factor times (space-joined) followed
// by the topics, newline-separated. Repetition keeps the original terms
// dominant against the appended expansion text.
ExpandedQuery compose_expanded_query(const Query& query, const TopicSet& topics,
                                     int repeat_factor);
ExpandedQuery identity_expanded_query(const Query& query);

// surface = original text followed by the topic sentences, newline-
// separated. The original document is always a prefix of the surface.
ExpandedDocument compose_expanded_document(const Document& doc,
                                           const TopicSet& topics);
ExpandedDocument identity_expanded_document(const Document& doc);

struct CacheRecord {
  std::string key;  // 64 hex chars
  std::string kind;
  std::string source_id;
  std::string raw_output;
  std::vector<std::string> topics;
  std::string model_id;
  std::string prompt_version;
  int requested_n = 0;
  std::string created_at;  // ISO-8601 UTC
};

// Cache identity covers everything that determines the output. Any change
// to kind, prompt version, model, N, or source text forces re-expansion.
std::string cache_key(Kind kind, std::string_view prompt_version,
                      std::string_view model_id, int requested_n,
                      std::string_view source_text);

// Append-only JSONL store sharded by the first two hex digits of the key
// (<dir>/<xx>.jsonl). Loads existing shards on construction; concurrent
// store() calls are serialized. Records are never mutated in place, so two
// runs over the same inputs leave the cache byte-stable.
class ExpansionCache {
 public:
  explicit ExpansionCache(std::filesystem::path dir);

  std::optional<CacheRecord> lookup(const std::string& key) const;
  void store(const CacheRecord& record);
  std::size_t size() const;
  const std::filesystem::path& dir() const { return dir_; }

 private:
  std::filesystem::path dir_;
  mutable std::shared_mutex mu_;
  std::unordered_map<std::string, CacheRecord> records_;
};

struct ExpanderOptions {
  int repeat_factor = 5;
  std::size_t doc_char_budget = kDefaultDocCharBudget;
  double temperature = 0.0;
  int max_output_tokens = 512;
  std::chrono::milliseconds timeout{30000};
  // Participate in cache keys; override to invalidate cached expansions
  // without clearing the store.
  std::string tqe_prompt_version{kTqePromptVersion};
  std::string tde_prompt_version{kTdePromptVersion};
};

struct ExpansionCounters {
  std::atomic<std::uint64_t> provider_calls{0};
  std::atomic<std::uint64_t> cache_hits{0};
  std::atomic<std::uint64_t> empty_expansions{0};
};

// Cache-first expansion front end. n == 0 is the identity path and never
// touches the provider or cache. Thread-safe: expand_* may be called
// concurrently from a parallel_for.
class Expander {
 public:
  Expander(llm::LlmClient& client, ExpansionCache* cache,
           ExpanderOptions options = {});

  ExpandedQuery expand_query(const Query& query, int n);
  ExpandedDocument expand_document(const Document& doc, int n);

  const ExpansionCounters& counters() const { return counters_; }
  const ExpanderOptions& options() const { return options_; }

 private:
  TopicSet obtain(Kind kind, const std::string& source_id,
                  const std::string& source_text, const std::string& prompt,
                  int n);

  llm::LlmClient& client_;
  ExpansionCache* cache_;  // may be null (no persistence)
  ExpanderOptions options_;
  ExpansionCounters counters_;
};

}  // namespace tcde::expansion
