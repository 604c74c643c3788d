// Command-line front end for the dual-expansion retrieval toolkit.
//
// Exit codes: 0 success, 2 configuration error, 3 data-format error,
// 4 provider error, 5 evaluation error.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "tcde/alignment.hpp"
#include "tcde/corpus.hpp"
#include "tcde/errors.hpp"
#include "tcde/eval.hpp"
#include "tcde/expansion.hpp"
#include "tcde/log.hpp"
#include "tcde/runner.hpp"

namespace {

using nlohmann::json;
using namespace tcde;

struct GlobalFlags {
  std::string config_path;
  bool mock_llm = false;
  bool mock_embedder = false;
  std::string cache_dir;
  std::string out_dir;
  std::uint64_t seed = 0;
  bool seed_given = false;
  unsigned workers = 0;
  bool verbose = false;
  bool quiet = false;
};

runner::ExperimentConfig load_config(const GlobalFlags& flags) {
  if (flags.config_path.empty()) {
    throw ConfigError("--config is required for this command");
  }
  auto config =
      runner::ExperimentConfig::from_json_file(flags.config_path);
  if (flags.mock_llm) config.llm.mock = true;
  if (flags.mock_embedder) config.embedding.mock = true;
  if (!flags.cache_dir.empty()) config.cache_dir = flags.cache_dir;
  if (!flags.out_dir.empty()) config.out_dir = flags.out_dir;
  if (flags.seed_given) config.seed = flags.seed;
  if (flags.workers > 0) config.workers = flags.workers;
  config.validate();
  return config;
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out << text;
}

json stats_json(const runner::StageCounters& counters,
                const llm::LlmClient& client) {
  return json{{"items", counters.items},
              {"provider_calls", counters.provider_calls},
              {"cache_hits", counters.cache_hits},
              {"failures", counters.failures},
              {"client_calls", client.stats().calls.load()},
              {"client_attempts", client.stats().attempts.load()}};
}

int cmd_run(const runner::ExperimentConfig& config) {
  auto artifacts = runner::run_experiment(config);
  std::cout << artifacts.report.to_text();
  std::cout << "run:       " << artifacts.run_path.string() << "\n"
            << "metrics:   " << artifacts.metrics_csv_path.string() << "\n"
            << "artifacts: " << artifacts.artifacts_path.string() << "\n";
  return 0;
}

int cmd_expand_corpus(const runner::ExperimentConfig& config, int n_override,
                      const std::string& out_override) {
  if (config.corpus_path.empty()) {
    throw ConfigError("dataset.corpus is required for expand-corpus");
  }
  int n = n_override >= 0 ? n_override : config.n_doc_topics;
  Corpus raw = load_corpus(config.corpus_path);
  Corpus flat;
  for (const auto& doc : raw) flat.add(Document{doc.id, "", doc.full_text()});

  auto client = runner::make_llm_client(config);
  expansion::ExpansionCache cache(config.cache_dir / "expansions");
  expansion::ExpanderOptions options;
  options.repeat_factor = config.repeat_factor;
  options.doc_char_budget = config.doc_char_budget;
  options.temperature = config.llm.temperature;
  options.max_output_tokens = config.llm.max_output_tokens;
  options.timeout = std::chrono::milliseconds(config.llm.timeout_ms);
  expansion::Expander expander(*client, &cache, options);

  runner::StageCounters counters;
  auto expanded =
      runner::expand_corpus(flat, expander, n, config.workers,
                            config.failure_rate_ceiling, counters);

  std::filesystem::path out_path =
      out_override.empty() ? config.out_dir / "expanded_corpus.jsonl"
                           : std::filesystem::path(out_override);
  std::string body;
  for (const auto& e : expanded) {
    json record = {{"_id", e.source.id}, {"text", e.surface_text}};
    record["topics"] =
        e.topic_set ? json(e.topic_set->topics) : json::array();
    body += record.dump();
    body += '\n';
  }
  write_file(out_path, body);
  write_file(config.out_dir / "corpus_expansion_stats.json",
             stats_json(counters, *client).dump(2) + "\n");

  std::cout << "expanded " << counters.items << " documents (provider calls: "
            << counters.provider_calls << ", cache hits: "
            << counters.cache_hits << ", degraded: " << counters.failures
            << ")\n"
            << "output: " << out_path.string() << "\n";
  return 0;
}

int cmd_expand_queries(const runner::ExperimentConfig& config, int n_override,
                       const std::string& out_override) {
  if (config.queries_path.empty()) {
    throw ConfigError("dataset.queries is required for expand-queries");
  }
  int n = n_override >= 0 ? n_override : config.n_query_topics;
  auto queries = load_queries(config.queries_path);

  auto client = runner::make_llm_client(config);
  expansion::ExpansionCache cache(config.cache_dir / "expansions");
  expansion::ExpanderOptions options;
  options.repeat_factor = config.repeat_factor;
  if (config.retriever == runner::Retriever::dense &&
      !config.repeat_for_dense) {
    options.repeat_factor = 1;
  }
  options.doc_char_budget = config.doc_char_budget;
  options.temperature = config.llm.temperature;
  options.max_output_tokens = config.llm.max_output_tokens;
  options.timeout = std::chrono::milliseconds(config.llm.timeout_ms);
  expansion::Expander expander(*client, &cache, options);

  runner::StageCounters counters;
  auto expanded =
      runner::expand_queries(queries, expander, n, config.workers,
                             config.failure_rate_ceiling, counters);

  std::filesystem::path out_path =
      out_override.empty() ? config.out_dir / "expanded_queries.jsonl"
                           : std::filesystem::path(out_override);
  std::string body;
  for (const auto& e : expanded) {
    json record = {{"_id", e.source.id},
                   {"text", e.surface_text},
                   {"repeat_factor", e.repeat_factor}};
    record["topics"] =
        e.topic_set ? json(e.topic_set->topics) : json::array();
    body += record.dump();
    body += '\n';
  }
  write_file(out_path, body);
  write_file(config.out_dir / "query_expansion_stats.json",
             stats_json(counters, *client).dump(2) + "\n");

  std::cout << "expanded " << counters.items << " queries (provider calls: "
            << counters.provider_calls << ", cache hits: "
            << counters.cache_hits << ", degraded: " << counters.failures
            << ")\n"
            << "output: " << out_path.string() << "\n";
  return 0;
}

int cmd_index(const runner::ExperimentConfig& config) {
  auto offline = runner::offline_stage(config);
  json info = {
      {"fingerprint", offline.fingerprint},
      {"dir", offline.index_dir.string()},
      {"rebuilt", offline.rebuilt},
      {"retriever", std::string(runner::retriever_name(offline.retriever))},
      {"expansion",
       {{"items", offline.expansion.items},
        {"provider_calls", offline.expansion.provider_calls},
        {"cache_hits", offline.expansion.cache_hits},
        {"failures", offline.expansion.failures}}},
      {"seconds", offline.seconds},
  };
  write_file(config.out_dir / "index_info.json", info.dump(2) + "\n");
  std::cout << (offline.rebuilt ? "built" : "reused") << " index "
            << offline.index_dir.string() << "\n"
            << "fingerprint: " << offline.fingerprint << "\n";
  return 0;
}

int cmd_retrieve(const runner::ExperimentConfig& config) {
  auto offline = runner::offline_stage(config);
  auto online = runner::online_stage(config, offline);
  std::filesystem::path run_path = config.out_dir / "run.trec";
  write_run(online.run, run_path);
  std::cout << "retrieved " << online.run.by_query.size()
            << " queries -> " << run_path.string() << "\n";
  return 0;
}

int cmd_evaluate(const runner::ExperimentConfig& config,
                 const std::string& run_override) {
  if (config.qrels_path.empty()) {
    throw ConfigError("dataset.qrels is required for evaluate");
  }
  std::filesystem::path run_path = run_override.empty()
                                       ? config.out_dir / "run.trec"
                                       : std::filesystem::path(run_override);
  Run run = load_run(run_path);
  Qrels qrels = load_qrels(config.qrels_path);
  auto report = eval::evaluate(run, qrels, config.metrics);
  write_file(config.out_dir / "metrics.csv", report.to_csv());
  write_file(config.out_dir / "metrics.txt", report.to_text());
  std::cout << report.to_text();
  return 0;
}

int cmd_ablate(const runner::ExperimentConfig& config) {
  auto table = runner::ablate(config);
  std::cout << table.to_text();
  std::cout << "table: " << (config.out_dir / "ablation.csv").string() << "\n";
  return 0;
}

int cmd_sweep(const runner::ExperimentConfig& config,
              const std::vector<int>& n_query_values,
              const std::vector<int>& n_doc_values) {
  auto table = runner::sweep_topics(config, n_query_values, n_doc_values);
  std::cout << table.to_text();
  std::cout << "table: " << (config.out_dir / "sweep.csv").string() << "\n";
  return 0;
}

int cmd_align(const runner::ExperimentConfig& config,
              const std::string& triples_path, std::size_t max_triples,
              int n_query_override, int n_doc_override) {
  if (config.corpus_path.empty() || config.queries_path.empty()) {
    throw ConfigError("dataset.corpus and dataset.queries are required");
  }
  Corpus corpus = load_corpus(config.corpus_path);
  auto queries = load_queries(config.queries_path);

  std::vector<alignment::AlignmentTriple> triples;
  if (!triples_path.empty()) {
    triples = alignment::load_triples(triples_path, corpus, queries);
  } else {
    if (config.qrels_path.empty()) {
      throw ConfigError(
          "either --triples or dataset.qrels is required to pick triples");
    }
    Qrels qrels = load_qrels(config.qrels_path);
    triples = alignment::sample_triples(corpus, queries, qrels, max_triples,
                                        config.seed);
    if (triples.empty()) {
      throw EvalError(
          "no usable triples: need queries with both relevant and "
          "judged non-relevant documents");
    }
  }

  int n_query = n_query_override >= 0 ? n_query_override
                                      : config.n_query_topics;
  int n_doc = n_doc_override >= 0 ? n_doc_override : config.n_doc_topics;

  auto client = runner::make_llm_client(config);
  expansion::ExpansionCache cache(config.cache_dir / "expansions");
  expansion::ExpanderOptions options;
  options.repeat_factor = config.repeat_factor;
  options.doc_char_budget = config.doc_char_budget;
  expansion::Expander expander(*client, &cache, options);
  auto provider = runner::make_embedding_provider(config);

  auto aggregate = alignment::analyze_triples(triples, expander, *provider,
                                              n_query, n_doc);
  write_file(config.out_dir / "alignment.csv",
             alignment::to_csv(aggregate, provider->model_id()));
  write_file(config.out_dir / "alignment.txt",
             alignment::to_text(aggregate, provider->model_id()));
  std::cout << alignment::to_text(aggregate, provider->model_id());
  return 0;
}

int cmd_dump_prompts() {
  Query sample_query{"q", "[QUERY]"};
  Document sample_doc{"d", "", "[DOCUMENT]"};
  std::cout << "query-side topic prompt (" << expansion::kTqePromptVersion
            << "), N = 5:\n---\n"
            << expansion::build_tqe_prompt(sample_query, 5) << "\n---\n\n";
  std::cout << "document-side topic prompt (" << expansion::kTdePromptVersion
            << "), N = 5:\n---\n"
            << expansion::build_tde_prompt(sample_doc, 5) << "\n---\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dual-expansion retrieval experiments"};
  app.require_subcommand(1);
  app.fallthrough();

  GlobalFlags flags;
  app.add_option("--config", flags.config_path,
                 "experiment config (JSON)");
  app.add_flag("--mock-llm", flags.mock_llm,
               "use the deterministic offline completion mock");
  app.add_flag("--mock-embedder", flags.mock_embedder,
               "use the deterministic offline hashing embedder");
  app.add_option("--cache-dir", flags.cache_dir,
                 "override the expansion/index cache directory");
  app.add_option("--out-dir", flags.out_dir, "override the output directory");
  auto* seed_opt =
      app.add_option("--seed", flags.seed, "override the sampling seed");
  app.add_option("--workers", flags.workers, "override the worker count");
  app.add_flag("--verbose", flags.verbose, "debug logging");
  app.add_flag("--quiet", flags.quiet, "warnings and errors only");

  auto* run_cmd = app.add_subcommand("run", "offline + online + evaluate");

  int expand_n = -1;
  std::string expand_out;
  auto* expand_corpus_cmd = app.add_subcommand(
      "expand-corpus", "expand documents and write the expanded corpus");
  expand_corpus_cmd->add_option("--n-doc", expand_n,
                                "topics per document (defaults to config)");
  expand_corpus_cmd->add_option("--out", expand_out, "output JSONL path");

  int expand_q_n = -1;
  std::string expand_q_out;
  auto* expand_queries_cmd = app.add_subcommand(
      "expand-queries", "expand queries and write the expanded forms");
  expand_queries_cmd->add_option("--n-query", expand_q_n,
                                 "topics per query (defaults to config)");
  expand_queries_cmd->add_option("--out", expand_q_out, "output JSONL path");

  auto* index_cmd =
      app.add_subcommand("index", "build or reuse the document index");
  auto* retrieve_cmd =
      app.add_subcommand("retrieve", "retrieve and write a run file");

  std::string eval_run_path;
  auto* evaluate_cmd =
      app.add_subcommand("evaluate", "score an existing run against qrels");
  evaluate_cmd->add_option("--run", eval_run_path,
                           "run file (default: <out-dir>/run.trec)");

  auto* ablate_cmd =
      app.add_subcommand("ablate", "run all four modes and tabulate");

  std::vector<int> sweep_n_query{0, 1, 2, 5, 10};
  std::vector<int> sweep_n_doc{0, 5};
  auto* sweep_cmd =
      app.add_subcommand("sweep", "topic-count sensitivity grid");
  sweep_cmd->add_option("--n-query", sweep_n_query,
                        "query-side topic counts (default 0 1 2 5 10)");
  sweep_cmd->add_option("--n-doc", sweep_n_doc,
                        "document-side topic counts (default 0 5)");

  std::string triples_path;
  std::size_t max_triples = 10;
  int align_n_query = -1;
  int align_n_doc = -1;
  auto* align_cmd = app.add_subcommand(
      "align", "embedding-space alignment diagnostics on triples");
  align_cmd->add_option("--triples", triples_path,
                        "TSV of query-id positive-id negative-id");
  align_cmd->add_option("--max-triples", max_triples,
                        "triples to sample from qrels when --triples is absent");
  align_cmd->add_option("--n-query", align_n_query,
                        "query-side topics (defaults to config)");
  align_cmd->add_option("--n-doc", align_n_doc,
                        "document-side topics (defaults to config)");

  auto* dump_cmd =
      app.add_subcommand("dump-prompts", "print the expansion prompt templates");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  flags.seed_given = seed_opt->count() > 0;
  if (flags.verbose) log::set_level(log::Level::debug);
  if (flags.quiet) log::set_level(log::Level::warn);

  try {
    if (dump_cmd->parsed()) return cmd_dump_prompts();

    auto config = load_config(flags);
    if (run_cmd->parsed()) return cmd_run(config);
    if (expand_corpus_cmd->parsed()) {
      return cmd_expand_corpus(config, expand_n, expand_out);
    }
    if (expand_queries_cmd->parsed()) {
      return cmd_expand_queries(config, expand_q_n, expand_q_out);
    }
    if (index_cmd->parsed()) return cmd_index(config);
    if (retrieve_cmd->parsed()) return cmd_retrieve(config);
    if (evaluate_cmd->parsed()) return cmd_evaluate(config, eval_run_path);
    if (ablate_cmd->parsed()) return cmd_ablate(config);
    if (sweep_cmd->parsed()) {
      return cmd_sweep(config, sweep_n_query, sweep_n_doc);
    }
    if (align_cmd->parsed()) {
      return cmd_align(config, triples_path, max_triples, align_n_query,
                       align_n_doc);
    }
    throw ConfigError("no command given");
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
