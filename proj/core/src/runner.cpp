#include "tcde/runner.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <initializer_list>
#include <set>
#include <sstream>

#include <json.hpp>

#include "tcde/errors.hpp"
#include "tcde/hash.hpp"
#include "tcde/log.hpp"
#include "tcde/parallel.hpp"

namespace tcde::runner {

namespace {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

Mode derive_mode(int n_query, int n_doc) {
  if (n_query > 0 && n_doc > 0) return Mode::tcde;
  if (n_query > 0) return Mode::tqe;
  if (n_doc > 0) return Mode::tde;
  return Mode::baseline;
}

std::filesystem::path resolve(const std::filesystem::path& base,
                              const std::filesystem::path& p) {
  if (p.empty() || p.is_absolute() || base.empty()) return p;
  return base / p;
}

void check_keys(const json& obj, std::initializer_list<const char*> allowed,
                const char* context) {
  for (const auto& [key, value] : obj.items()) {
    (void)value;
    bool known = false;
    for (const char* a : allowed) {
      if (key == a) {
        known = true;
        break;
      }
    }
    if (!known) {
      throw ConfigError(std::string("config: unknown key \"") + key +
                        "\" in " + context);
    }
  }
}

const json* opt_section(const json& j, const char* key) {
  if (!j.contains(key)) return nullptr;
  const json& section = j.at(key);
  if (!section.is_object()) {
    throw ConfigError(std::string("config: \"") + key +
                      "\" must be an object");
  }
  return &section;
}

template <typename T>
void read_field(const json& obj, const char* key, T& out,
                const char* context) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string("config: bad value for ") + context + "." +
                      key);
  }
}

void read_path(const json& obj, const char* key, std::filesystem::path& out,
               const std::filesystem::path& base, const char* context) {
  std::string s;
  if (!obj.contains(key)) return;
  read_field(obj, key, s, context);
  out = resolve(base, std::filesystem::path(s));
}

std::string format_cell(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

std::vector<eval::MetricReport::Key> metric_columns(
    const eval::MetricConfig& metrics) {
  std::vector<eval::MetricReport::Key> columns;
  for (const char* name : eval::kMetricNames) {
    for (int k : metrics.k_values) columns.emplace_back(name, k);
  }
  return columns;
}

expansion::ExpanderOptions expander_options(const ExperimentConfig& config) {
  expansion::ExpanderOptions options;
  options.repeat_factor = config.repeat_factor;
  options.doc_char_budget = config.doc_char_budget;
  options.temperature = config.llm.temperature;
  options.max_output_tokens = config.llm.max_output_tokens;
  options.timeout = std::chrono::milliseconds(config.llm.timeout_ms);
  return options;
}

Corpus flatten(const Corpus& corpus) {
  Corpus flat;
  for (const auto& doc : corpus) {
    flat.add(Document{doc.id, "", doc.full_text()});
  }
  return flat;
}

void write_text_file(const std::filesystem::path& path,
                     const std::string& content) {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out << content;
  if (!out.good()) throw FormatError("write failed: " + path.string());
}

json counters_to_json(const StageCounters& c) {
  return json{{"items", c.items},
              {"provider_calls", c.provider_calls},
              {"cache_hits", c.cache_hits},
              {"failures", c.failures}};
}

}  // namespace

std::string_view retriever_name(Retriever r) {
  return r == Retriever::sparse ? "sparse" : "dense";
}

std::string_view mode_name(Mode m) {
  switch (m) {
    case Mode::baseline: return "baseline";
    case Mode::tqe: return "tqe";
    case Mode::tde: return "tde";
    case Mode::tcde: return "tcde";
  }
  return "?";
}

Retriever parse_retriever(std::string_view name) {
  if (name == "sparse") return Retriever::sparse;
  if (name == "dense") return Retriever::dense;
  throw ConfigError("unknown retriever \"" + std::string(name) +
                    "\" (expected sparse or dense)");
}

Mode parse_mode(std::string_view name) {
  if (name == "baseline") return Mode::baseline;
  if (name == "tqe") return Mode::tqe;
  if (name == "tde") return Mode::tde;
  if (name == "tcde") return Mode::tcde;
  throw ConfigError("unknown mode \"" + std::string(name) +
                    "\" (expected baseline, tqe, tde or tcde)");
}

ExperimentConfig ExperimentConfig::from_json_file(
    const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config: " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return from_json_text(buffer.str(), path.parent_path());
}

ExperimentConfig ExperimentConfig::from_json_text(
    std::string_view text, const std::filesystem::path& base_dir) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded() || !j.is_object()) {
    throw ConfigError("config must be a JSON object");
  }
  check_keys(j,
             {"dataset", "retriever", "mode", "expansion", "bm25", "tokenizer",
              "metrics", "cache_dir", "out_dir", "run_tag", "seed", "workers",
              "llm", "embedding"},
             "top level");

  ExperimentConfig c;

  if (const json* dataset = opt_section(j, "dataset")) {
    check_keys(*dataset, {"corpus", "queries", "qrels"}, "dataset");
    read_path(*dataset, "corpus", c.corpus_path, base_dir, "dataset");
    read_path(*dataset, "queries", c.queries_path, base_dir, "dataset");
    read_path(*dataset, "qrels", c.qrels_path, base_dir, "dataset");
  }

  if (j.contains("retriever")) {
    std::string name;
    read_field(j, "retriever", name, "top level");
    c.retriever = parse_retriever(name);
  }

  bool n_query_given = false;
  bool n_doc_given = false;
  if (const json* expansion = opt_section(j, "expansion")) {
    check_keys(*expansion,
               {"n_query_topics", "n_doc_topics", "repeat_factor",
                "repeat_for_dense", "doc_char_budget", "failure_rate_ceiling"},
               "expansion");
    n_query_given = expansion->contains("n_query_topics");
    n_doc_given = expansion->contains("n_doc_topics");
    read_field(*expansion, "n_query_topics", c.n_query_topics, "expansion");
    read_field(*expansion, "n_doc_topics", c.n_doc_topics, "expansion");
    read_field(*expansion, "repeat_factor", c.repeat_factor, "expansion");
    read_field(*expansion, "repeat_for_dense", c.repeat_for_dense,
               "expansion");
    read_field(*expansion, "doc_char_budget", c.doc_char_budget, "expansion");
    read_field(*expansion, "failure_rate_ceiling", c.failure_rate_ceiling,
               "expansion");
  }

  if (j.contains("mode")) {
    std::string name;
    read_field(j, "mode", name, "top level");
    c.mode = parse_mode(name);
    // Fill the side a mode needs when the count was not spelled out.
    if ((c.mode == Mode::tqe || c.mode == Mode::tcde) && !n_query_given) {
      c.n_query_topics = 5;
    }
    if ((c.mode == Mode::tde || c.mode == Mode::tcde) && !n_doc_given) {
      c.n_doc_topics = 5;
    }
  } else {
    c.mode = derive_mode(c.n_query_topics, c.n_doc_topics);
  }

  if (const json* bm25 = opt_section(j, "bm25")) {
    check_keys(*bm25, {"k1", "b", "pad_zero_scores"}, "bm25");
    read_field(*bm25, "k1", c.bm25.k1, "bm25");
    read_field(*bm25, "b", c.bm25.b, "bm25");
    read_field(*bm25, "pad_zero_scores", c.pad_zero_scores, "bm25");
  }

  if (const json* tokenizer = opt_section(j, "tokenizer")) {
    check_keys(*tokenizer, {"lowercase", "stopwords"}, "tokenizer");
    read_field(*tokenizer, "lowercase", c.tokenizer.lowercase, "tokenizer");
    read_field(*tokenizer, "stopwords", c.tokenizer.stopwords, "tokenizer");
  }

  if (const json* metrics = opt_section(j, "metrics")) {
    check_keys(*metrics,
               {"k_values", "binarization_threshold", "exponential_gain",
                "missing_qrels"},
               "metrics");
    read_field(*metrics, "k_values", c.metrics.k_values, "metrics");
    read_field(*metrics, "binarization_threshold",
               c.metrics.binarization_threshold, "metrics");
    read_field(*metrics, "exponential_gain", c.metrics.exponential_gain,
               "metrics");
    if (metrics->contains("missing_qrels")) {
      std::string policy;
      read_field(*metrics, "missing_qrels", policy, "metrics");
      if (policy == "skip") {
        c.metrics.missing_qrels = eval::MissingQrelsPolicy::skip;
      } else if (policy == "score_zero") {
        c.metrics.missing_qrels = eval::MissingQrelsPolicy::score_zero;
      } else {
        throw ConfigError(
            "config: metrics.missing_qrels must be \"skip\" or "
            "\"score_zero\"");
      }
    }
  }

  read_path(j, "cache_dir", c.cache_dir, base_dir, "top level");
  read_path(j, "out_dir", c.out_dir, base_dir, "top level");
  read_field(j, "run_tag", c.run_tag, "top level");
  read_field(j, "seed", c.seed, "top level");
  read_field(j, "workers", c.workers, "top level");

  if (const json* llm = opt_section(j, "llm")) {
    check_keys(*llm,
               {"mock", "mock_script", "endpoint", "model", "credential_env",
                "temperature", "max_output_tokens", "timeout_ms",
                "max_retries", "backoff_base_ms", "max_concurrent",
                "requests_per_second"},
               "llm");
    read_field(*llm, "mock", c.llm.mock, "llm");
    read_path(*llm, "mock_script", c.llm.mock_script, base_dir, "llm");
    read_field(*llm, "endpoint", c.llm.endpoint, "llm");
    read_field(*llm, "model", c.llm.model, "llm");
    read_field(*llm, "credential_env", c.llm.credential_env, "llm");
    read_field(*llm, "temperature", c.llm.temperature, "llm");
    read_field(*llm, "max_output_tokens", c.llm.max_output_tokens, "llm");
    read_field(*llm, "timeout_ms", c.llm.timeout_ms, "llm");
    read_field(*llm, "max_retries", c.llm.max_retries, "llm");
    read_field(*llm, "backoff_base_ms", c.llm.backoff_base_ms, "llm");
    read_field(*llm, "max_concurrent", c.llm.max_concurrent, "llm");
    read_field(*llm, "requests_per_second", c.llm.requests_per_second, "llm");
  }

  if (const json* embedding = opt_section(j, "embedding")) {
    check_keys(*embedding,
               {"mock", "mock_dimension", "endpoint", "model",
                "credential_env", "dimension", "batch_limit",
                "max_input_chars", "query_prefix", "passage_prefix",
                "timeout_ms", "max_retries", "backoff_base_ms"},
               "embedding");
    read_field(*embedding, "mock", c.embedding.mock, "embedding");
    read_field(*embedding, "mock_dimension", c.embedding.mock_dimension,
               "embedding");
    read_field(*embedding, "endpoint", c.embedding.endpoint, "embedding");
    read_field(*embedding, "model", c.embedding.model, "embedding");
    read_field(*embedding, "credential_env", c.embedding.credential_env,
               "embedding");
    read_field(*embedding, "dimension", c.embedding.dimension, "embedding");
    read_field(*embedding, "batch_limit", c.embedding.batch_limit,
               "embedding");
    read_field(*embedding, "max_input_chars", c.embedding.max_input_chars,
               "embedding");
    read_field(*embedding, "query_prefix", c.embedding.prefixes.query_prefix,
               "embedding");
    read_field(*embedding, "passage_prefix",
               c.embedding.prefixes.passage_prefix, "embedding");
    read_field(*embedding, "timeout_ms", c.embedding.timeout_ms, "embedding");
    read_field(*embedding, "max_retries", c.embedding.max_retries,
               "embedding");
    read_field(*embedding, "backoff_base_ms", c.embedding.backoff_base_ms,
               "embedding");
  }

  c.validate();
  return c;
}

void ExperimentConfig::validate() const {
  if (n_query_topics < 0 || n_doc_topics < 0) {
    throw ConfigError("topic counts must be non-negative");
  }
  switch (mode) {
    case Mode::baseline:
      if (n_query_topics != 0 || n_doc_topics != 0) {
        throw ConfigError(
            "mode baseline requires n_query_topics = 0 and n_doc_topics = 0");
      }
      break;
    case Mode::tqe:
      if (n_query_topics < 1 || n_doc_topics != 0) {
        throw ConfigError(
            "mode tqe requires n_query_topics >= 1 and n_doc_topics = 0");
      }
      break;
    case Mode::tde:
      if (n_query_topics != 0 || n_doc_topics < 1) {
        throw ConfigError(
            "mode tde requires n_query_topics = 0 and n_doc_topics >= 1");
      }
      break;
    case Mode::tcde:
      if (n_query_topics < 1 || n_doc_topics < 1) {
        throw ConfigError(
            "mode tcde requires n_query_topics >= 1 and n_doc_topics >= 1");
      }
      break;
  }
  if (repeat_factor < 1) throw ConfigError("repeat_factor must be >= 1");
  if (workers < 1) throw ConfigError("workers must be >= 1");
  if (doc_char_budget < 1) throw ConfigError("doc_char_budget must be >= 1");
  if (failure_rate_ceiling < 0.0 || failure_rate_ceiling > 1.0) {
    throw ConfigError("failure_rate_ceiling must be in [0, 1]");
  }
  if (bm25.k1 < 0.0) throw ConfigError("bm25.k1 must be >= 0");
  if (bm25.b < 0.0 || bm25.b > 1.0) throw ConfigError("bm25.b must be in [0, 1]");
  if (llm.max_retries < 0 || embedding.max_retries < 0) {
    throw ConfigError("max_retries must be >= 0");
  }
  if (llm.max_concurrent < 1) throw ConfigError("llm.max_concurrent must be >= 1");
  if (embedding.mock && embedding.mock_dimension == 0) {
    throw ConfigError("embedding.mock_dimension must be >= 1");
  }
  eval::validate_config(metrics);
}

std::string ExperimentConfig::to_json() const {
  json j = {
      {"dataset",
       {{"corpus", corpus_path.string()},
        {"queries", queries_path.string()},
        {"qrels", qrels_path.string()}}},
      {"retriever", std::string(retriever_name(retriever))},
      {"mode", std::string(mode_name(mode))},
      {"expansion",
       {{"n_query_topics", n_query_topics},
        {"n_doc_topics", n_doc_topics},
        {"repeat_factor", repeat_factor},
        {"repeat_for_dense", repeat_for_dense},
        {"doc_char_budget", doc_char_budget},
        {"failure_rate_ceiling", failure_rate_ceiling}}},
      {"bm25",
       {{"k1", bm25.k1}, {"b", bm25.b}, {"pad_zero_scores", pad_zero_scores}}},
      {"tokenizer",
       {{"lowercase", tokenizer.lowercase},
        {"stopwords", tokenizer.stopwords}}},
      {"metrics",
       {{"k_values", metrics.k_values},
        {"binarization_threshold", metrics.binarization_threshold},
        {"exponential_gain", metrics.exponential_gain},
        {"missing_qrels",
         metrics.missing_qrels == eval::MissingQrelsPolicy::skip
             ? "skip"
             : "score_zero"}}},
      {"cache_dir", cache_dir.string()},
      {"out_dir", out_dir.string()},
      {"run_tag", run_tag},
      {"seed", seed},
      {"workers", workers},
      {"llm",
       {{"mock", llm.mock},
        {"mock_script", llm.mock_script.string()},
        {"endpoint", llm.endpoint},
        {"model", llm.model},
        {"credential_env", llm.credential_env},
        {"temperature", llm.temperature},
        {"max_output_tokens", llm.max_output_tokens},
        {"timeout_ms", llm.timeout_ms},
        {"max_retries", llm.max_retries},
        {"backoff_base_ms", llm.backoff_base_ms},
        {"max_concurrent", llm.max_concurrent},
        {"requests_per_second", llm.requests_per_second}}},
      {"embedding",
       {{"mock", embedding.mock},
        {"mock_dimension", embedding.mock_dimension},
        {"endpoint", embedding.endpoint},
        {"model", embedding.model},
        {"credential_env", embedding.credential_env},
        {"dimension", embedding.dimension},
        {"batch_limit", embedding.batch_limit},
        {"max_input_chars", embedding.max_input_chars},
        {"query_prefix", embedding.prefixes.query_prefix},
        {"passage_prefix", embedding.prefixes.passage_prefix},
        {"timeout_ms", embedding.timeout_ms},
        {"max_retries", embedding.max_retries},
        {"backoff_base_ms", embedding.backoff_base_ms}}},
  };
  return j.dump(2);
}

std::unique_ptr<llm::LlmClient> make_llm_client(
    const ExperimentConfig& config) {
  if (config.llm.mock) {
    if (!config.llm.mock_script.empty()) {
      return std::make_unique<llm::MockLlmClient>(
          llm::MockLlmClient::from_script_file(config.llm.mock_script));
    }
    return std::make_unique<llm::MockLlmClient>();
  }
  llm::ProviderConfig provider;
  provider.endpoint = config.llm.endpoint;
  provider.credential_env = config.llm.credential_env;
  provider.max_retries = config.llm.max_retries;
  provider.backoff_base = std::chrono::milliseconds(config.llm.backoff_base_ms);
  provider.max_concurrent = config.llm.max_concurrent;
  provider.requests_per_second = config.llm.requests_per_second;
  return std::make_unique<llm::HttpLlmClient>(std::move(provider),
                                              config.llm.model);
}

std::unique_ptr<dense::EmbeddingProvider> make_embedding_provider(
    const ExperimentConfig& config) {
  if (config.embedding.mock) {
    auto provider =
        std::make_unique<dense::HashingEmbedder>(config.embedding.mock_dimension);
    provider->set_prefixes(config.embedding.prefixes);
    return provider;
  }
  dense::EmbeddingProviderConfig provider;
  provider.endpoint = config.embedding.endpoint;
  provider.model = config.embedding.model;
  provider.credential_env = config.embedding.credential_env;
  provider.dimension = config.embedding.dimension;
  provider.batch_limit = config.embedding.batch_limit;
  provider.max_input_chars = config.embedding.max_input_chars;
  provider.prefixes = config.embedding.prefixes;
  provider.max_retries = config.embedding.max_retries;
  provider.backoff_base =
      std::chrono::milliseconds(config.embedding.backoff_base_ms);
  provider.timeout = std::chrono::milliseconds(config.embedding.timeout_ms);
  return std::make_unique<dense::HttpEmbeddingProvider>(std::move(provider));
}

namespace {

// Shared degradation loop for both expansion stages. Fn maps an index to
// nothing but may throw; failures are counted by the caller's lambda.
template <typename ExpandOne>
void run_expansion_loop(std::size_t n_items, unsigned workers,
                        double failure_rate_ceiling,
                        std::atomic<std::uint64_t>& failures,
                        const char* stage_name, ExpandOne&& expand_one) {
  const double threshold = failure_rate_ceiling * static_cast<double>(n_items);
  parallel_for(n_items, workers, [&](std::size_t i) {
    bool failed = false;
    std::string reason;
    try {
      expand_one(i);
    } catch (const EmptyExpansionError& e) {
      failed = true;
      reason = e.what();
    } catch (const ProviderError& e) {
      failed = true;
      reason = e.what();
    }
    if (failed) {
      auto count = failures.fetch_add(1) + 1;
      log::warn(std::string(stage_name) +
                ": expansion degraded to identity (" + reason + ")");
      if (static_cast<double>(count) > threshold) {
        throw ProviderError(
            std::string(stage_name) + ": " + std::to_string(count) + "/" +
            std::to_string(n_items) +
            " expansions failed, exceeding the failure-rate ceiling of " +
            std::to_string(failure_rate_ceiling));
      }
    }
  });
}

void fill_counter_deltas(const expansion::Expander& expander,
                         std::uint64_t calls_before,
                         std::uint64_t hits_before, StageCounters& counters) {
  counters.provider_calls =
      expander.counters().provider_calls.load() - calls_before;
  counters.cache_hits = expander.counters().cache_hits.load() - hits_before;
}

}  // namespace

std::vector<expansion::ExpandedDocument> expand_corpus(
    const Corpus& corpus, expansion::Expander& expander, int n_doc_topics,
    unsigned workers, double failure_rate_ceiling, StageCounters& counters) {
  std::vector<expansion::ExpandedDocument> out(corpus.size());
  counters.items = corpus.size();
  if (n_doc_topics <= 0) {
    for (std::size_t i = 0; i < corpus.size(); ++i) {
      out[i] = expansion::identity_expanded_document(corpus.at(i));
    }
    return out;
  }

  std::uint64_t calls_before = expander.counters().provider_calls.load();
  std::uint64_t hits_before = expander.counters().cache_hits.load();
  std::atomic<std::uint64_t> failures{0};
  run_expansion_loop(corpus.size(), workers, failure_rate_ceiling, failures,
                     "offline expansion", [&](std::size_t i) {
                       try {
                         out[i] = expander.expand_document(corpus.at(i),
                                                           n_doc_topics);
                       } catch (...) {
                         out[i] = expansion::identity_expanded_document(
                             corpus.at(i));
                         throw;
                       }
                     });
  counters.failures = failures.load();
  fill_counter_deltas(expander, calls_before, hits_before, counters);
  return out;
}

std::vector<expansion::ExpandedQuery> expand_queries(
    const std::vector<Query>& queries, expansion::Expander& expander,
    int n_query_topics, unsigned workers, double failure_rate_ceiling,
    StageCounters& counters) {
  std::vector<expansion::ExpandedQuery> out(queries.size());
  counters.items = queries.size();
  if (n_query_topics <= 0) {
    for (std::size_t i = 0; i < queries.size(); ++i) {
      out[i] = expansion::identity_expanded_query(queries[i]);
    }
    return out;
  }

  std::uint64_t calls_before = expander.counters().provider_calls.load();
  std::uint64_t hits_before = expander.counters().cache_hits.load();
  std::atomic<std::uint64_t> failures{0};
  run_expansion_loop(queries.size(), workers, failure_rate_ceiling, failures,
                     "query expansion", [&](std::size_t i) {
                       try {
                         out[i] = expander.expand_query(queries[i],
                                                        n_query_topics);
                       } catch (...) {
                         out[i] =
                             expansion::identity_expanded_query(queries[i]);
                         throw;
                       }
                     });
  counters.failures = failures.load();
  fill_counter_deltas(expander, calls_before, hits_before, counters);
  return out;
}

std::string doc_index_fingerprint(const ExperimentConfig& config,
                                  const std::string& corpus_digest,
                                  const std::string& llm_model_id,
                                  const std::string& embedding_model_id) {
  std::string desc = "doc-index-v1";
  desc += "|corpus=" + corpus_digest;
  desc += "|retriever=" + std::string(retriever_name(config.retriever));
  desc += "|n_doc_topics=" + std::to_string(config.n_doc_topics);
  if (config.n_doc_topics > 0) {
    desc += "|llm_model=" + llm_model_id;
    desc += "|prompt_version=" + std::string(expansion::kTdePromptVersion);
    desc += "|doc_char_budget=" + std::to_string(config.doc_char_budget);
  }
  if (config.retriever == Retriever::sparse) {
    desc += "|tokenizer=lowercase:";
    desc += config.tokenizer.lowercase ? "1" : "0";
    desc += ",stopwords:";
    for (const auto& s : config.tokenizer.stopwords) {
      desc += s;
      desc += '\x1f';
    }
  } else {
    desc += "|embedder=" + embedding_model_id;
    desc += "|dimension=" +
            std::to_string(config.embedding.mock
                               ? config.embedding.mock_dimension
                               : config.embedding.dimension);
    desc += "|prefixes=" + config.embedding.prefixes.query_prefix + '\x1f' +
            config.embedding.prefixes.passage_prefix;
    desc += "|max_input_chars=" + std::to_string(config.embedding.max_input_chars);
  }
  return sha256_hex(desc);
}

OfflineResult offline_stage(const ExperimentConfig& config) {
  config.validate();
  if (config.corpus_path.empty()) {
    throw ConfigError("dataset.corpus is required for the offline stage");
  }
  auto start = Clock::now();

  OfflineResult result;
  result.retriever = config.retriever;

  Corpus raw = load_corpus(config.corpus_path);
  if (raw.empty()) {
    throw FormatError("corpus is empty: " + config.corpus_path.string());
  }
  const std::string digest = raw.content_digest();

  std::unique_ptr<llm::LlmClient> client;
  if (config.n_doc_topics > 0) {
    client = make_llm_client(config);
    result.llm_model_id = client->model_id();
  }
  std::unique_ptr<dense::EmbeddingProvider> provider;
  if (config.retriever == Retriever::dense) {
    provider = make_embedding_provider(config);
    result.embedding_model_id = provider->model_id();
  }

  result.fingerprint = doc_index_fingerprint(
      config, digest, result.llm_model_id, result.embedding_model_id);
  result.index_dir =
      config.cache_dir / "indexes" / result.fingerprint.substr(0, 16);

  const std::filesystem::path fp_path = result.index_dir / "fingerprint.json";
  if (std::filesystem::exists(fp_path)) {
    try {
      std::ifstream in(fp_path, std::ios::binary);
      json j = json::parse(in, nullptr, false);
      if (!j.is_discarded() &&
          j.value("fingerprint", "") == result.fingerprint &&
          j.value("retriever", "") == retriever_name(config.retriever)) {
        if (config.retriever == Retriever::sparse) {
          result.sparse_index = std::make_shared<sparse::InvertedIndex>(
              sparse::InvertedIndex::load(result.index_dir));
        } else {
          result.dense_index = std::make_shared<dense::VectorIndex>(
              dense::VectorIndex::load(result.index_dir));
        }
        result.rebuilt = false;
        result.expansion.items = raw.size();
        result.seconds = seconds_since(start);
        log::info("reusing index " + result.index_dir.string());
        return result;
      }
      log::warn("index at " + result.index_dir.string() +
                " does not match the requested fingerprint; rebuilding");
    } catch (const Error& e) {
      log::warn("failed to reuse index (" + std::string(e.what()) +
                "); rebuilding");
    }
  }

  Corpus flat = flatten(raw);
  Corpus indexed;
  if (config.n_doc_topics > 0) {
    expansion::ExpansionCache cache(config.cache_dir / "expansions");
    expansion::Expander expander(*client, &cache, expander_options(config));
    auto expanded =
        expand_corpus(flat, expander, config.n_doc_topics, config.workers,
                      config.failure_rate_ceiling, result.expansion);
    for (auto& e : expanded) {
      indexed.add(Document{e.source.id, "", std::move(e.surface_text)});
    }
  } else {
    result.expansion.items = flat.size();
    indexed = std::move(flat);
  }

  if (config.retriever == Retriever::sparse) {
    auto index = sparse::InvertedIndex::build(indexed, config.tokenizer);
    index.save(result.index_dir);
    result.sparse_index =
        std::make_shared<sparse::InvertedIndex>(std::move(index));
  } else {
    auto index = dense::VectorIndex::build(indexed, *provider);
    index.save(result.index_dir);
    result.dense_index =
        std::make_shared<dense::VectorIndex>(std::move(index));
  }

  json fp = {{"fingerprint", result.fingerprint},
             {"retriever", std::string(retriever_name(config.retriever))},
             {"corpus_digest", digest},
             {"n_doc_topics", config.n_doc_topics}};
  write_text_file(fp_path, fp.dump(2) + "\n");

  result.rebuilt = true;
  result.seconds = seconds_since(start);
  return result;
}

OnlineResult online_stage(const ExperimentConfig& config,
                          const OfflineResult& offline) {
  config.validate();
  if (config.queries_path.empty()) {
    throw ConfigError("dataset.queries is required for the online stage");
  }
  if (offline.retriever != config.retriever) {
    throw ConfigError(
        "index retriever mismatch: index was built for " +
        std::string(retriever_name(offline.retriever)) + ", config asks for " +
        std::string(retriever_name(config.retriever)));
  }
  if ((config.retriever == Retriever::sparse && !offline.sparse_index) ||
      (config.retriever == Retriever::dense && !offline.dense_index)) {
    throw ConfigError("offline result carries no index");
  }

  auto start = Clock::now();
  OnlineResult result;

  auto queries = load_queries(config.queries_path);

  std::vector<expansion::ExpandedQuery> expanded;
  if (config.n_query_topics > 0) {
    auto client = make_llm_client(config);
    expansion::ExpansionCache cache(config.cache_dir / "expansions");
    auto options = expander_options(config);
    if (config.retriever == Retriever::dense && !config.repeat_for_dense) {
      options.repeat_factor = 1;
    }
    expansion::Expander expander(*client, &cache, options);
    expanded = expand_queries(queries, expander, config.n_query_topics,
                              config.workers, config.failure_rate_ceiling,
                              result.expansion);
  } else {
    expanded.resize(queries.size());
    for (std::size_t i = 0; i < queries.size(); ++i) {
      expanded[i] = expansion::identity_expanded_query(queries[i]);
    }
    result.expansion.items = queries.size();
  }

  std::unique_ptr<dense::EmbeddingProvider> provider;
  if (config.retriever == Retriever::dense) {
    provider = make_embedding_provider(config);
  }

  const std::size_t k =
      static_cast<std::size_t>(config.metrics.k_values.back());
  sparse::SearchOptions search_options{config.pad_zero_scores};

  std::vector<std::vector<ScoredDoc>> ranked(queries.size());
  parallel_for(queries.size(), config.workers, [&](std::size_t i) {
    if (config.retriever == Retriever::sparse) {
      ranked[i] = sparse::search(*offline.sparse_index,
                                 expanded[i].surface_text, k, config.bm25,
                                 search_options);
    } else {
      ranked[i] = dense::search(*offline.dense_index,
                                expanded[i].surface_text, k, *provider);
    }
  });

  result.run.tag = config.run_tag;
  for (std::size_t i = 0; i < queries.size(); ++i) {
    auto& entries = result.run.by_query[queries[i].id];
    entries.reserve(ranked[i].size());
    for (auto& scored : ranked[i]) {
      entries.push_back(RunEntry{std::move(scored.doc_id), scored.score});
    }
  }
  result.seconds = seconds_since(start);
  return result;
}

RunArtifacts run_experiment(const ExperimentConfig& config) {
  if (config.qrels_path.empty()) {
    throw ConfigError("dataset.qrels is required to run an experiment");
  }
  OfflineResult offline = offline_stage(config);
  OnlineResult online = online_stage(config, offline);

  auto eval_start = Clock::now();
  Qrels qrels = load_qrels(config.qrels_path);
  eval::MetricReport report = eval::evaluate(online.run, qrels, config.metrics);
  double eval_seconds = seconds_since(eval_start);

  std::filesystem::create_directories(config.out_dir);
  RunArtifacts artifacts;
  artifacts.run_path = config.out_dir / "run.trec";
  artifacts.metrics_csv_path = config.out_dir / "metrics.csv";
  artifacts.metrics_text_path = config.out_dir / "metrics.txt";
  artifacts.artifacts_path = config.out_dir / "artifacts.json";

  write_run(online.run, artifacts.run_path);
  write_text_file(artifacts.metrics_csv_path, report.to_csv());
  write_text_file(artifacts.metrics_text_path, report.to_text());

  json means = json::object();
  for (const auto& [key, value] : report.means) {
    means[key.first + "@" + std::to_string(key.second)] = value;
  }
  json meta = {
      {"schema", "tcde-artifacts-v1"},
      {"config", json::parse(config.to_json())},
      {"doc_index",
       {{"fingerprint", offline.fingerprint},
        {"dir", offline.index_dir.string()},
        {"rebuilt", offline.rebuilt},
        {"llm_model", offline.llm_model_id},
        {"embedding_model", offline.embedding_model_id}}},
      {"counters",
       {{"offline_expansion", counters_to_json(offline.expansion)},
        {"online_expansion", counters_to_json(online.expansion)}}},
      {"timings_seconds",
       {{"offline", offline.seconds},
        {"online", online.seconds},
        {"evaluate", eval_seconds}}},
      {"metrics", means},
      {"evaluated_queries", report.evaluated_queries},
      {"skipped_queries", report.skipped_queries},
  };
  write_text_file(artifacts.artifacts_path, meta.dump(2) + "\n");

  artifacts.run = std::move(online.run);
  artifacts.report = std::move(report);
  artifacts.fingerprint = offline.fingerprint;
  artifacts.index_rebuilt = offline.rebuilt;
  artifacts.offline_expansion = offline.expansion;
  artifacts.online_expansion = online.expansion;
  artifacts.offline_seconds = offline.seconds;
  artifacts.online_seconds = online.seconds;
  artifacts.eval_seconds = eval_seconds;
  return artifacts;
}

std::string ResultsTable::to_csv() const {
  std::ostringstream out;
  out << (kind == Kind::by_mode ? "mode" : "n_query,n_doc");
  for (const auto& [name, k] : columns) {
    out << ',' << name << '@' << k;
  }
  out << "\n";
  for (const auto& row : rows) {
    if (kind == Kind::by_mode) {
      out << row.label;
    } else {
      out << row.n_query_topics << ',' << row.n_doc_topics;
    }
    for (const auto& key : columns) {
      out << ',' << format_cell(row.means.at(key));
    }
    out << "\n";
  }
  return out.str();
}

std::string ResultsTable::to_text() const {
  std::ostringstream out;
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%-16s",
                kind == Kind::by_mode ? "mode" : "n_query/n_doc");
  out << buf;
  for (const auto& [name, k] : columns) {
    std::snprintf(buf, sizeof(buf), " %12s",
                  (name + "@" + std::to_string(k)).c_str());
    out << buf;
  }
  out << "\n";
  for (const auto& row : rows) {
    std::string label = kind == Kind::by_mode
                            ? row.label
                            : std::to_string(row.n_query_topics) + "/" +
                                  std::to_string(row.n_doc_topics);
    std::snprintf(buf, sizeof(buf), "%-16s", label.c_str());
    out << buf;
    for (const auto& key : columns) {
      std::snprintf(buf, sizeof(buf), " %12.6f", row.means.at(key));
      out << buf;
    }
    out << "\n";
  }
  return out.str();
}

namespace {

TableRow row_from_artifacts(const ExperimentConfig& cell,
                            const RunArtifacts& artifacts) {
  TableRow row;
  row.label = std::string(mode_name(cell.mode));
  row.n_query_topics = cell.n_query_topics;
  row.n_doc_topics = cell.n_doc_topics;
  row.run_path = artifacts.run_path;
  row.fingerprint = artifacts.fingerprint;
  for (const auto& [key, value] : artifacts.report.means) {
    row.means[key] = value;
  }
  return row;
}

}  // namespace

ResultsTable ablate(const ExperimentConfig& base) {
  base.validate();
  ResultsTable table;
  table.kind = ResultsTable::Kind::by_mode;
  table.columns = metric_columns(base.metrics);

  const int n_query = base.n_query_topics >= 1 ? base.n_query_topics : 5;
  const int n_doc = base.n_doc_topics >= 1 ? base.n_doc_topics : 5;

  for (Mode mode : {Mode::baseline, Mode::tqe, Mode::tde, Mode::tcde}) {
    ExperimentConfig cell = base;
    cell.mode = mode;
    cell.n_query_topics =
        (mode == Mode::tqe || mode == Mode::tcde) ? n_query : 0;
    cell.n_doc_topics = (mode == Mode::tde || mode == Mode::tcde) ? n_doc : 0;
    cell.out_dir = base.out_dir / "ablate" / std::string(mode_name(mode));
    log::info("ablation: running mode " + std::string(mode_name(mode)));
    RunArtifacts artifacts = run_experiment(cell);
    table.rows.push_back(row_from_artifacts(cell, artifacts));
  }

  write_text_file(base.out_dir / "ablation.csv", table.to_csv());
  write_text_file(base.out_dir / "ablation.txt", table.to_text());
  return table;
}

ResultsTable sweep_topics(const ExperimentConfig& base,
                          const std::vector<int>& n_query_values,
                          const std::vector<int>& n_doc_values) {
  if (n_query_values.empty() || n_doc_values.empty()) {
    throw ConfigError("sweep requires at least one value per axis");
  }
  for (int v : n_query_values) {
    if (v < 0) throw ConfigError("sweep topic counts must be non-negative");
  }
  for (int v : n_doc_values) {
    if (v < 0) throw ConfigError("sweep topic counts must be non-negative");
  }

  ResultsTable table;
  table.kind = ResultsTable::Kind::by_topic_counts;
  table.columns = metric_columns(base.metrics);

  for (int n_query : n_query_values) {
    for (int n_doc : n_doc_values) {
      ExperimentConfig cell = base;
      cell.n_query_topics = n_query;
      cell.n_doc_topics = n_doc;
      cell.mode = derive_mode(n_query, n_doc);
      cell.out_dir = base.out_dir / "sweep" /
                     ("nq" + std::to_string(n_query) + "_nd" +
                      std::to_string(n_doc));
      log::info("sweep: n_query=" + std::to_string(n_query) +
                " n_doc=" + std::to_string(n_doc));
      RunArtifacts artifacts = run_experiment(cell);
      table.rows.push_back(row_from_artifacts(cell, artifacts));
    }
  }

  write_text_file(base.out_dir / "sweep.csv", table.to_csv());
  write_text_file(base.out_dir / "sweep.txt", table.to_text());
  return table;
}

}  // namespace tcde::runner
