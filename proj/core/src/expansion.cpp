#include "tcde/expansion.hpp"

#include <cctype>
#include <ctime>
#include <fstream>
#include <mutex>

#include <json.hpp>

#include "tcde/errors.hpp"
#include "tcde/hash.hpp"
#include "tcde/log.hpp"

namespace tcde::expansion {

namespace {

using nlohmann::json;

// Cuts to at most budget bytes without splitting a UTF-8 sequence.
std::string truncate_utf8(const std::string& text, std::size_t budget) {
  if (text.size() <= budget) return text;
  std::size_t cut = budget;
  while (cut > 0 &&
         (static_cast<unsigned char>(text[cut]) & 0xC0) == 0x80) {
    --cut;
  }
  return text.substr(0, cut);
}

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// Strips a leading enumerator ("1.", "1)", "-", "*", U+2022). Returns
// nullopt when the line carries none.
std::optional<std::string> strip_enumerator(const std::string& line) {
  std::size_t i = 0;
  // "12." / "12)"
  std::size_t digits = i;
  while (digits < line.size() &&
         std::isdigit(static_cast<unsigned char>(line[digits]))) {
    ++digits;
  }
  if (digits > i && digits < line.size() &&
      (line[digits] == '.' || line[digits] == ')')) {
    std::size_t rest = digits + 1;
    while (rest < line.size() && line[rest] == ' ') ++rest;
    return line.substr(rest);
  }
  // "- " / "* "
  if (line.size() >= 2 && (line[0] == '-' || line[0] == '*') &&
      line[1] == ' ') {
    std::size_t rest = 2;
    while (rest < line.size() && line[rest] == ' ') ++rest;
    return line.substr(rest);
  }
  // U+2022 bullet (0xE2 0x80 0xA2)
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xE2 &&
      static_cast<unsigned char>(line[1]) == 0x80 &&
      static_cast<unsigned char>(line[2]) == 0xA2) {
    std::size_t rest = 3;
    while (rest < line.size() && line[rest] == ' ') ++rest;
    return line.substr(rest);
  }
  return std::nullopt;
}

std::string now_utc_iso8601() {
  std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

json record_to_json(const CacheRecord& r) {
  return json{{"key", r.key},
              {"kind", r.kind},
              {"source_id", r.source_id},
              {"raw_output", r.raw_output},
              {"topics", r.topics},
              {"model_id", r.model_id},
              {"prompt_version", r.prompt_version},
              {"requested_n", r.requested_n},
              {"created_at", r.created_at}};
}

std::optional<CacheRecord> record_from_json(const json& j) {
  if (!j.is_object()) return std::nullopt;
  CacheRecord r;
  try {
    r.key = j.at("key").get<std::string>();
    r.kind = j.at("kind").get<std::string>();
    r.source_id = j.at("source_id").get<std::string>();
    r.raw_output = j.at("raw_output").get<std::string>();
    r.topics = j.at("topics").get<std::vector<std::string>>();
    r.model_id = j.at("model_id").get<std::string>();
    r.prompt_version = j.at("prompt_version").get<std::string>();
    r.requested_n = j.at("requested_n").get<int>();
    r.created_at = j.value("created_at", "");
  } catch (const json::exception&) {
    return std::nullopt;
  }
  if (r.key.size() != 64) return std::nullopt;
  return r;
}

}  // namespace

std::string_view kind_name(Kind kind) {
  return kind == Kind::tqe ? "tqe" : "tde";
}

std::string build_tqe_prompt(const Query& query, int n) {
  return "Given a user query: " + query.text +
         "\n\nYour task is to generate " + std::to_string(n) +
         " diverse topic-focused documents that each reflect a different "
         "perspective or subtopic relevant to the query.";
}

std::string build_tde_prompt(const Document& doc, int n,
                             std::size_t char_budget) {
  return "Given a document: " + truncate_utf8(doc.text, char_budget) +
         "\nPlease analyze this document and identify " + std::to_string(n) +
         " abstract topics. Each topic should be expressed as a single "
         "sentence.";
}

TopicSet parse_topics(const std::string& raw, int requested_n, Kind kind) {
  std::vector<std::string> enumerated;
  std::vector<std::string> plain;
  std::size_t start = 0;
  while (start <= raw.size()) {
    std::size_t end = raw.find('\n', start);
    if (end == std::string::npos) end = raw.size();
    std::string line = trim(raw.substr(start, end - start));
    start = end + 1;
    if (line.empty()) continue;
    if (auto content = strip_enumerator(line)) {
      std::string t = trim(*content);
      if (!t.empty()) enumerated.push_back(std::move(t));
    } else {
      plain.push_back(line);
    }
  }

  // If any line is enumerated the rest is treated as preamble/filler.
  std::vector<std::string>& topics = enumerated.empty() ? plain : enumerated;
  if (topics.empty()) {
    throw EmptyExpansionError("expansion produced no usable topics (" +
                              std::string(kind_name(kind)) + ")");
  }
  if (static_cast<int>(topics.size()) > requested_n) {
    log::warn("provider over-delivered " + std::to_string(topics.size()) +
              " topics (requested " + std::to_string(requested_n) +
              "); keeping the first " + std::to_string(requested_n));
    topics.resize(static_cast<std::size_t>(requested_n));
  } else if (static_cast<int>(topics.size()) < requested_n) {
    log::warn("provider under-delivered " + std::to_string(topics.size()) +
              " topics (requested " + std::to_string(requested_n) + ")");
  }

  TopicSet set;
  set.topics = std::move(topics);
  set.kind = kind;
  set.requested_n = requested_n;
  return set;
}

ExpandedQuery compose_expanded_query(const Query& query, const TopicSet& topics,
                                     int repeat_factor) {
  int r = std::max(1, repeat_factor);
  std::string surface;
  for (int i = 0; i < r; ++i) {
    if (i > 0) surface += ' ';
    surface += query.text;
  }
  for (const auto& topic : topics.topics) {
    surface += '\n';
    surface += topic;
  }
  ExpandedQuery out;
  out.source = query;
  out.topic_set = topics;
  out.surface_text = std::move(surface);
  out.repeat_factor = r;
  return out;
}

ExpandedQuery identity_expanded_query(const Query& query) {
  ExpandedQuery out;
  out.source = query;
  out.surface_text = query.text;
  out.repeat_factor = 1;
  return out;
}

ExpandedDocument compose_expanded_document(const Document& doc,
                                           const TopicSet& topics) {
  std::string surface = doc.text;
  for (const auto& topic : topics.topics) {
    surface += '\n';
    surface += topic;
  }
  ExpandedDocument out;
  out.source = doc;
  out.topic_set = topics;
  out.surface_text = std::move(surface);
  return out;
}

ExpandedDocument identity_expanded_document(const Document& doc) {
  ExpandedDocument out;
  out.source = doc;
  out.surface_text = doc.text;
  return out;
}

std::string cache_key(Kind kind, std::string_view prompt_version,
                      std::string_view model_id, int requested_n,
                      std::string_view source_text) {
  std::string buf;
  buf += kind_name(kind);
  buf += '\x1f';
  buf += prompt_version;
  buf += '\x1f';
  buf += model_id;
  buf += '\x1f';
  buf += std::to_string(requested_n);
  buf += '\x1f';
  buf += source_text;
  return sha256_hex(buf);
}

ExpansionCache::ExpansionCache(std::filesystem::path dir)
    : dir_(std::move(dir)) {
  std::filesystem::create_directories(dir_);
  for (const auto& entry : std::filesystem::directory_iterator(dir_)) {
    if (!entry.is_regular_file() || entry.path().extension() != ".jsonl") {
      continue;
    }
    std::ifstream in(entry.path(), std::ios::binary);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      json j = json::parse(line, nullptr, false);
      auto record = j.is_discarded() ? std::nullopt : record_from_json(j);
      if (!record) {
        log::warn("skipping corrupt cache record at " +
                  entry.path().string() + ":" + std::to_string(line_no));
        continue;
      }
      records_[record->key] = std::move(*record);
    }
  }
}

std::optional<CacheRecord> ExpansionCache::lookup(
    const std::string& key) const {
  std::shared_lock lock(mu_);
  auto it = records_.find(key);
  if (it == records_.end()) return std::nullopt;
  return it->second;
}

void ExpansionCache::store(const CacheRecord& record) {
  std::unique_lock lock(mu_);
  auto [it, inserted] = records_.emplace(record.key, record);
  (void)it;
  if (!inserted) return;  // append-only: first write wins
  std::filesystem::path shard = dir_ / (record.key.substr(0, 2) + ".jsonl");
  std::ofstream out(shard, std::ios::binary | std::ios::app);
  if (!out) {
    throw FormatError("cannot append to cache shard: " + shard.string());
  }
  out << record_to_json(record).dump() << '\n';
  out.flush();
}

std::size_t ExpansionCache::size() const {
  std::shared_lock lock(mu_);
  return records_.size();
}

Expander::Expander(llm::LlmClient& client, ExpansionCache* cache,
                   ExpanderOptions options)
    : client_(client), cache_(cache), options_(std::move(options)) {}

TopicSet Expander::obtain(Kind kind, const std::string& source_id,
                          const std::string& source_text,
                          const std::string& prompt, int n) {
  const std::string version = kind == Kind::tqe
                                  ? options_.tqe_prompt_version
                                  : options_.tde_prompt_version;
  const std::string key =
      cache_key(kind, version, client_.model_id(), n, source_text);

  if (cache_ != nullptr) {
    if (auto hit = cache_->lookup(key)) {
      counters_.cache_hits.fetch_add(1);
      TopicSet set;
      set.topics = hit->topics;
      set.kind = kind;
      set.requested_n = hit->requested_n;
      set.model_id = hit->model_id;
      set.prompt_version = hit->prompt_version;
      return set;
    }
  }

  counters_.provider_calls.fetch_add(1);
  llm::CompletionRequest request;
  request.model_id = client_.model_id();
  request.prompt = prompt;
  request.temperature = options_.temperature;
  request.max_output_tokens = options_.max_output_tokens;
  request.timeout = options_.timeout;

  std::string raw = client_.complete(request);
  TopicSet set;
  try {
    set = parse_topics(raw, n, kind);
  } catch (const EmptyExpansionError&) {
    counters_.empty_expansions.fetch_add(1);
    throw;
  }
  set.model_id = client_.model_id();
  set.prompt_version = version;

  if (cache_ != nullptr) {
    CacheRecord record;
    record.key = key;
    record.kind = std::string(kind_name(kind));
    record.source_id = source_id;
    record.raw_output = raw;
    record.topics = set.topics;
    record.model_id = set.model_id;
    record.prompt_version = version;
    record.requested_n = n;
    record.created_at = now_utc_iso8601();
    cache_->store(record);
  }
  return set;
}

ExpandedQuery Expander::expand_query(const Query& query, int n) {
  if (n <= 0) return identity_expanded_query(query);
  std::string prompt = build_tqe_prompt(query, n);
  TopicSet set = obtain(Kind::tqe, query.id, query.text, prompt, n);
  return compose_expanded_query(query, set, options_.repeat_factor);
}

ExpandedDocument Expander::expand_document(const Document& doc, int n) {
  if (n <= 0) return identity_expanded_document(doc);
  std::string prompt = build_tde_prompt(doc, n, options_.doc_char_budget);
  TopicSet set = obtain(Kind::tde, doc.id, doc.text, prompt, n);
  return compose_expanded_document(doc, set);
}

}  // namespace tcde::expansion
