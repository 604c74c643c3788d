#include "tcde/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "tcde/errors.hpp"

namespace tcde::eval {

namespace {

double gain(int grade, bool exponential) {
  if (exponential) return std::exp2(static_cast<double>(grade)) - 1.0;
  return static_cast<double>(grade);
}

int grade_of(const QueryGrades& grades, const std::string& doc_id) {
  auto it = grades.find(doc_id);
  return it == grades.end() ? 0 : it->second;
}

std::size_t relevant_count(const QueryGrades& grades, int threshold) {
  std::size_t r = 0;
  for (const auto& [doc, grade] : grades) {
    (void)doc;
    if (grade >= threshold) ++r;
  }
  return r;
}

std::string format_value(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.10f", v);
  return buf;
}

}  // namespace

void validate_config(const MetricConfig& config) {
  if (config.k_values.empty()) {
    throw ConfigError("metrics: k_values must not be empty");
  }
  int prev = 0;
  for (int k : config.k_values) {
    if (k <= 0) throw ConfigError("metrics: k values must be positive");
    if (k <= prev) {
      throw ConfigError("metrics: k values must be strictly increasing");
    }
    prev = k;
  }
  if (config.binarization_threshold < 1) {
    throw ConfigError("metrics: binarization threshold must be >= 1");
  }
}

double ndcg_at_k(const std::vector<RunEntry>& ranking,
                 const QueryGrades& grades, int k, bool exponential_gain) {
  if (k <= 0) throw ConfigError("ndcg: k must be positive");

  double dcg = 0.0;
  std::size_t depth = std::min<std::size_t>(ranking.size(),
                                            static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < depth; ++i) {
    int grade = grade_of(grades, ranking[i].doc_id);
    if (grade > 0) {
      dcg += gain(grade, exponential_gain) /
             std::log2(static_cast<double>(i) + 2.0);
    }
  }

  std::vector<int> judged;
  judged.reserve(grades.size());
  for (const auto& [doc, grade] : grades) {
    (void)doc;
    if (grade > 0) judged.push_back(grade);
  }
  std::sort(judged.begin(), judged.end(), std::greater<int>());
  double idcg = 0.0;
  std::size_t ideal_depth = std::min<std::size_t>(judged.size(),
                                                  static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < ideal_depth; ++i) {
    idcg += gain(judged[i], exponential_gain) /
            std::log2(static_cast<double>(i) + 2.0);
  }
  if (idcg == 0.0) return 0.0;
  return dcg / idcg;
}

double map_at_k(const std::vector<RunEntry>& ranking,
                const QueryGrades& grades, int k,
                int binarization_threshold) {
  if (k <= 0) throw ConfigError("map: k must be positive");
  std::size_t total_relevant = relevant_count(grades, binarization_threshold);
  if (total_relevant == 0) return 0.0;

  double sum_precision = 0.0;
  std::size_t hits = 0;
  std::size_t depth = std::min<std::size_t>(ranking.size(),
                                            static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < depth; ++i) {
    if (grade_of(grades, ranking[i].doc_id) >= binarization_threshold) {
      ++hits;
      sum_precision += static_cast<double>(hits) /
                       (static_cast<double>(i) + 1.0);
    }
  }
  return sum_precision / static_cast<double>(total_relevant);
}

double recall_at_k(const std::vector<RunEntry>& ranking,
                   const QueryGrades& grades, int k,
                   int binarization_threshold) {
  if (k <= 0) throw ConfigError("recall: k must be positive");
  std::size_t total_relevant = relevant_count(grades, binarization_threshold);
  if (total_relevant == 0) return 0.0;

  std::size_t hits = 0;
  std::size_t depth = std::min<std::size_t>(ranking.size(),
                                            static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < depth; ++i) {
    if (grade_of(grades, ranking[i].doc_id) >= binarization_threshold) {
      ++hits;
    }
  }
  return static_cast<double>(hits) / static_cast<double>(total_relevant);
}

double MetricReport::mean(const std::string& metric, int k) const {
  auto it = means.find(Key{metric, k});
  if (it == means.end()) {
    throw EvalError("no mean recorded for " + metric + "@" +
                    std::to_string(k));
  }
  return it->second;
}

std::string MetricReport::to_csv() const {
  std::ostringstream out;
  out << "# metrics-csv v1"
      << " binarization_threshold=" << config.binarization_threshold
      << " gain=" << (config.exponential_gain ? "exponential" : "linear")
      << " missing_qrels="
      << (config.missing_qrels == MissingQrelsPolicy::skip ? "skip"
                                                           : "score_zero")
      << "\n";
  out << "metric,k,query_id,value\n";
  for (const auto& [key, values] : per_query) {
    for (const auto& [qid, value] : values) {
      out << key.first << ',' << key.second << ',' << qid << ','
          << format_value(value) << "\n";
    }
    out << key.first << ',' << key.second << ",mean,"
        << format_value(means.at(key)) << "\n";
  }
  return out.str();
}

std::string MetricReport::to_text() const {
  std::ostringstream out;
  out << "queries evaluated: " << evaluated_queries;
  if (skipped_queries > 0) {
    out << " (skipped " << skipped_queries << " without judgments)";
  }
  out << "\n";
  for (const auto& [key, value] : means) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%-12s %.4f",
                  (key.first + "@" + std::to_string(key.second)).c_str(),
                  value);
    out << buf << "\n";
  }
  return out.str();
}

MetricReport evaluate(const Run& run, const Qrels& qrels,
                      const MetricConfig& config) {
  validate_config(config);

  MetricReport report;
  report.config = config;

  // The evaluated set: every judged query, plus run queries kept by the
  // score_zero policy. std::map keys keep everything sorted.
  std::map<std::string, const std::vector<RunEntry>*> evaluated;
  static const std::vector<RunEntry> kEmptyRanking;

  bool any_shared = false;
  for (const auto& [qid, grades] : qrels) {
    (void)grades;
    auto it = run.by_query.find(qid);
    if (it != run.by_query.end()) {
      evaluated[qid] = &it->second;
      any_shared = true;
    } else {
      evaluated[qid] = &kEmptyRanking;  // scored 0 everywhere
    }
  }
  for (const auto& [qid, ranking] : run.by_query) {
    if (qrels.find(qid) != qrels.end()) continue;
    if (config.missing_qrels == MissingQrelsPolicy::score_zero) {
      evaluated[qid] = &ranking;
    } else {
      ++report.skipped_queries;
    }
  }
  if (!any_shared) {
    throw EvalError("run and qrels share no queries; nothing to evaluate");
  }

  static const QueryGrades kNoGrades;
  for (const auto& [qid, ranking] : evaluated) {
    const auto qit = qrels.find(qid);
    const QueryGrades& grades = qit == qrels.end() ? kNoGrades : qit->second;
    for (int k : config.k_values) {
      report.per_query[{"ndcg", k}][qid] =
          ndcg_at_k(*ranking, grades, k, config.exponential_gain);
      report.per_query[{"map", k}][qid] =
          map_at_k(*ranking, grades, k, config.binarization_threshold);
      report.per_query[{"recall", k}][qid] =
          recall_at_k(*ranking, grades, k, config.binarization_threshold);
    }
  }
  report.evaluated_queries = evaluated.size();

  for (const auto& [key, values] : report.per_query) {
    double sum = 0.0;
    for (const auto& [qid, value] : values) {
      (void)qid;
      sum += value;
    }
    report.means[key] = values.empty()
                            ? 0.0
                            : sum / static_cast<double>(values.size());
  }
  return report;
}

}  // namespace tcde::eval
