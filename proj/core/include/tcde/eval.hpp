#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "tcde/corpus.hpp"

namespace tcde::eval {

// What to do with run queries that have no judgments at all.
enum class MissingQrelsPolicy {
  skip,        // drop them from the aggregate (default)
  score_zero,  // count them as zero for every metric
};

struct MetricConfig {
  std::vector<int> k_values{10, 1000};  // strictly increasing, all > 0
  // Grades >= threshold count as relevant for the binary metrics (MAP,
  // Recall). NDCG always uses the graded values.
  int binarization_threshold = 1;
  bool exponential_gain = false;  // NDCG gain 2^grade - 1 instead of grade
  MissingQrelsPolicy missing_qrels = MissingQrelsPolicy::skip;
};

// NDCG@k with linear gain by default: DCG = sum grade_i / log2(i + 1) over
// the top k (ranks i starting at 1); the ideal DCG uses all judged grades
// sorted descending, truncated at k. Queries with zero ideal DCG score 0.
double ndcg_at_k(const std::vector<RunEntry>& ranking,
                 const QueryGrades& grades, int k,
                 bool exponential_gain = false);

// MAP@k with the full relevant count R in the denominator:
//   (1/R) * sum over relevant hits in the top k of precision@hit_rank.
double map_at_k(const std::vector<RunEntry>& ranking,
                const QueryGrades& grades, int k,
                int binarization_threshold = 1);

// Fraction of the R relevant documents retrieved in the top k.
double recall_at_k(const std::vector<RunEntry>& ranking,
                   const QueryGrades& grades, int k,
                   int binarization_threshold = 1);

inline constexpr const char* kMetricNames[] = {"ndcg", "map", "recall"};

struct MetricReport {
  using Key = std::pair<std::string, int>;  // (metric name, k)

  std::map<Key, std::map<std::string, double>> per_query;
  std::map<Key, double> means;
  std::size_t evaluated_queries = 0;
  std::size_t skipped_queries = 0;  // run queries without judgments (skip policy)
  MetricConfig config;

  double mean(const std::string& metric, int k) const;

  // CSV schema: metric,k,query_id,value with "mean" rows per metric@k and a
  // versioned header comment recording the evaluation settings.
  std::string to_csv() const;
  // Human-readable aligned summary of the means.
  std::string to_text() const;
};

// Throws ConfigError unless k_values is non-empty, strictly increasing and
// positive, and the binarization threshold is >= 1.
void validate_config(const MetricConfig& config);

// Scores a run against judgments. Queries present in qrels but absent from
// the run contribute 0 to every metric; run queries without judgments
// follow config.missing_qrels. Throws EvalError when the run and qrels
// share no queries, and ConfigError for invalid k/threshold settings.
MetricReport evaluate(const Run& run, const Qrels& qrels,
                      const MetricConfig& config = {});

}  // namespace tcde::eval
