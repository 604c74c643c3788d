#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "tcde/corpus.hpp"
#include "tcde/dense_index.hpp"
#include "tcde/eval.hpp"
#include "tcde/expansion.hpp"
#include "tcde/llm_client.hpp"
#include "tcde/sparse_index.hpp"

namespace tcde::runner {

enum class Retriever { sparse, dense };
enum class Mode { baseline, tqe, tde, tcde };

std::string_view retriever_name(Retriever r);
std::string_view mode_name(Mode m);
Retriever parse_retriever(std::string_view name);  // ConfigError on unknown
Mode parse_mode(std::string_view name);

struct LlmSettings {
  bool mock = false;
  // Optional JSON script ([{"contains","response"}]) giving the mock
  // crafted answers for matching prompts.
  std::filesystem::path mock_script;
  std::string endpoint;
  std::string model = "qwen-turbo";
  std::string credential_env = "TCDE_LLM_API_KEY";
  double temperature = 0.0;
  int max_output_tokens = 512;
  int timeout_ms = 30000;
  int max_retries = 3;
  int backoff_base_ms = 250;
  int max_concurrent = 8;
  double requests_per_second = 0.0;
};

struct EmbeddingSettings {
  bool mock = false;
  std::size_t mock_dimension = 256;
  std::string endpoint;
  std::string model = "multilingual-e5-base";
  std::string credential_env = "TCDE_EMBEDDING_API_KEY";
  std::size_t dimension = 0;  // 0 = accept the provider's dimension
  std::size_t batch_limit = 16;
  std::size_t max_input_chars = 8192;
  dense::PrefixConfig prefixes;
  int timeout_ms = 30000;
  int max_retries = 3;
  int backoff_base_ms = 250;
};

// One experiment = dataset + retriever + expansion mode + provider wiring.
// Loadable from JSON (unknown keys are rejected so typos cannot silently
// change an experiment).
struct ExperimentConfig {
  std::filesystem::path corpus_path;
  std::filesystem::path queries_path;
  std::filesystem::path qrels_path;

  Retriever retriever = Retriever::sparse;
  Mode mode = Mode::baseline;
  int n_query_topics = 0;
  int n_doc_topics = 0;
  int repeat_factor = 5;
  // Query repetition also applies to the dense retriever unless disabled.
  bool repeat_for_dense = true;

  sparse::Bm25Params bm25;
  sparse::TokenizerConfig tokenizer;
  bool pad_zero_scores = false;

  eval::MetricConfig metrics;

  std::size_t doc_char_budget = expansion::kDefaultDocCharBudget;
  // Offline expansion aborts when failures / documents exceeds this rate;
  // individual failures degrade to the unexpanded document.
  double failure_rate_ceiling = 0.01;

  std::filesystem::path cache_dir = ".tcde-cache";
  std::filesystem::path out_dir = "out";
  std::string run_tag = "tcde";
  std::uint64_t seed = 7;
  unsigned workers = 4;

  LlmSettings llm;
  EmbeddingSettings embedding;

  // Relative dataset paths resolve against the config file's directory.
  static ExperimentConfig from_json_file(const std::filesystem::path& path);
  static ExperimentConfig from_json_text(
      std::string_view text, const std::filesystem::path& base_dir = {});

  // Mode/topic-count consistency: baseline = (0,0); tqe = (>=1, 0);
  // tde = (0, >=1); tcde = (>=1, >=1). Also bounds-checks the numeric knobs.
  void validate() const;

  // Effective settings as JSON. Contains environment variable *names* for
  // credentials, never their values.
  std::string to_json() const;
};

struct StageCounters {
  std::uint64_t items = 0;
  std::uint64_t provider_calls = 0;
  std::uint64_t cache_hits = 0;
  std::uint64_t failures = 0;  // degraded to identity
};

std::unique_ptr<llm::LlmClient> make_llm_client(const ExperimentConfig& config);
std::unique_ptr<dense::EmbeddingProvider> make_embedding_provider(
    const ExperimentConfig& config);

// Expands every document (n_doc_topics each) with per-item degradation:
// provider failures and empty expansions fall back to the unexpanded
// document and count as failures; the stage aborts once failures exceed
// failure_rate_ceiling * items. Output order matches input order for any
// worker count.
std::vector<expansion::ExpandedDocument> expand_corpus(
    const Corpus& corpus, expansion::Expander& expander, int n_doc_topics,
    unsigned workers, double failure_rate_ceiling, StageCounters& counters);

std::vector<expansion::ExpandedQuery> expand_queries(
    const std::vector<Query>& queries, expansion::Expander& expander,
    int n_query_topics, unsigned workers, double failure_rate_ceiling,
    StageCounters& counters);

// Identity of the on-disk document index: corpus content, retriever,
// document-side expansion settings (only when they apply), tokenizer or
// embedder settings. Configurations with equal fingerprints can share an
// index; query-side settings never participate.
std::string doc_index_fingerprint(const ExperimentConfig& config,
                                  const std::string& corpus_digest,
                                  const std::string& llm_model_id,
                                  const std::string& embedding_model_id);

struct OfflineResult {
  Retriever retriever = Retriever::sparse;
  std::string fingerprint;
  std::filesystem::path index_dir;
  bool rebuilt = false;
  StageCounters expansion;
  double seconds = 0.0;
  std::string llm_model_id;        // empty when no document expansion ran
  std::string embedding_model_id;  // empty for sparse
  std::shared_ptr<const sparse::InvertedIndex> sparse_index;
  std::shared_ptr<const dense::VectorIndex> dense_index;
};

// Loads the corpus, expands documents when configured, builds or reuses the
// persisted index under cache_dir/indexes/<fingerprint>. A fingerprint hit
// skips expansion and building entirely.
OfflineResult offline_stage(const ExperimentConfig& config);

struct OnlineResult {
  Run run;
  StageCounters expansion;
  double seconds = 0.0;
};

// Expands queries when configured and retrieves top max(k_values) for each.
// The offline result must match the config's retriever (ConfigError).
OnlineResult online_stage(const ExperimentConfig& config,
                          const OfflineResult& offline);

struct RunArtifacts {
  std::filesystem::path run_path;
  std::filesystem::path metrics_csv_path;
  std::filesystem::path metrics_text_path;
  std::filesystem::path artifacts_path;
  Run run;
  eval::MetricReport report;
  std::string fingerprint;
  bool index_rebuilt = false;
  StageCounters offline_expansion;
  StageCounters online_expansion;
  double offline_seconds = 0.0;
  double online_seconds = 0.0;
  double eval_seconds = 0.0;
};

// offline + online + evaluate; writes run.trec, metrics.csv, metrics.txt
// and artifacts.json into out_dir.
RunArtifacts run_experiment(const ExperimentConfig& config);

struct TableRow {
  std::string label;  // mode name
  int n_query_topics = 0;
  int n_doc_topics = 0;
  std::map<eval::MetricReport::Key, double> means;
  std::filesystem::path run_path;
  std::string fingerprint;
};

struct ResultsTable {
  enum class Kind { by_mode, by_topic_counts };
  Kind kind = Kind::by_mode;
  std::vector<eval::MetricReport::Key> columns;
  std::vector<TableRow> rows;

  std::string to_csv() const;  // %.6f cells
  std::string to_text() const;
};

// Runs all four modes against one dataset, sharing caches and indexes
// whenever fingerprints coincide. Sub-runs land in out_dir/ablate/<mode>/;
// the table is written to out_dir/ablation.csv (+ .txt).
ResultsTable ablate(const ExperimentConfig& base);

// Topic-count sensitivity grid. Each (n_query, n_doc) cell derives its mode
// from the counts and runs in out_dir/sweep/nq<q>_nd<d>/; the table is
// written to out_dir/sweep.csv (+ .txt).
ResultsTable sweep_topics(const ExperimentConfig& base,
                          const std::vector<int>& n_query_values,
                          const std::vector<int>& n_doc_values);

}  // namespace tcde::runner
