#include "tcde/alignment.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "tcde/errors.hpp"
#include "tcde/sparse_index.hpp"

namespace tcde::alignment {

namespace {

// Deliberately small: just enough to keep function words out of the
// overlap diagnostics.
const std::set<std::string>& builtin_stopwords() {
  static const std::set<std::string> kStopwords = {
      "a",  "an", "and", "are", "as",  "at",  "be",  "by", "for", "from",
      "in", "is", "it",  "of",  "on",  "or",  "the", "to", "was", "were",
      "with"};
  return kStopwords;
}

std::set<std::string> token_set(std::string_view text) {
  std::set<std::string> out;
  for (auto& token : sparse::tokenize(text)) {
    if (builtin_stopwords().count(token) == 0) out.insert(std::move(token));
  }
  return out;
}

Document flattened(const Document& doc) {
  return Document{doc.id, "", doc.full_text()};
}

double pair_cosine(dense::EmbeddingProvider& provider,
                   const std::string& query_text,
                   const std::string& passage_text) {
  auto qv = provider.embed({query_text}, dense::TextRole::query);
  auto pv = provider.embed({passage_text}, dense::TextRole::passage);
  return dense::cosine(qv.at(0), pv.at(0));
}

std::string format_cos(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

}  // namespace

std::vector<std::string> lexical_overlap(std::string_view a,
                                         std::string_view b) {
  auto sa = token_set(a);
  auto sb = token_set(b);
  std::vector<std::string> out;
  std::set_intersection(sa.begin(), sa.end(), sb.begin(), sb.end(),
                        std::back_inserter(out));
  return out;
}

AlignmentReport analyze_triple(const AlignmentTriple& triple,
                               expansion::Expander& expander,
                               dense::EmbeddingProvider& provider,
                               int n_query, int n_doc) {
  if (n_query < 0 || n_doc < 0) {
    throw ConfigError("alignment: topic counts must be non-negative");
  }
  Document pos = flattened(triple.positive);
  Document neg = flattened(triple.negative);

  auto expanded_query = n_query == 0
                            ? expansion::identity_expanded_query(triple.query)
                            : expander.expand_query(triple.query, n_query);
  auto expanded_pos = n_doc == 0 ? expansion::identity_expanded_document(pos)
                                 : expander.expand_document(pos, n_doc);
  auto expanded_neg = n_doc == 0 ? expansion::identity_expanded_document(neg)
                                 : expander.expand_document(neg, n_doc);

  AlignmentReport report;
  report.query_id = triple.query.id;
  report.positive_id = pos.id;
  report.negative_id = neg.id;

  report.cos_query_positive_before =
      pair_cosine(provider, triple.query.text, pos.text);
  report.cos_query_negative_before =
      pair_cosine(provider, triple.query.text, neg.text);
  report.cos_query_positive_after =
      pair_cosine(provider, expanded_query.surface_text,
                  expanded_pos.surface_text);
  report.cos_query_negative_after =
      pair_cosine(provider, expanded_query.surface_text,
                  expanded_neg.surface_text);

  report.positive_overlap_before = lexical_overlap(triple.query.text, pos.text);
  report.positive_overlap_after =
      lexical_overlap(expanded_query.surface_text, expanded_pos.surface_text);
  report.negative_overlap_before =
      lexical_overlap(triple.query.text, neg.text);
  report.negative_overlap_after =
      lexical_overlap(expanded_query.surface_text, expanded_neg.surface_text);

  report.positive_improved =
      report.cos_query_positive_after > report.cos_query_positive_before;
  report.negative_separated =
      report.cos_query_negative_after < report.cos_query_negative_before;
  return report;
}

AggregateAlignment analyze_triples(std::span<const AlignmentTriple> triples,
                                   expansion::Expander& expander,
                                   dense::EmbeddingProvider& provider,
                                   int n_query, int n_doc) {
  AggregateAlignment aggregate;
  for (const auto& triple : triples) {
    aggregate.rows.push_back(
        analyze_triple(triple, expander, provider, n_query, n_doc));
  }
  if (!aggregate.rows.empty()) {
    std::size_t improved = 0, separated = 0;
    for (const auto& row : aggregate.rows) {
      if (row.positive_improved) ++improved;
      if (row.negative_separated) ++separated;
    }
    aggregate.positive_improved_fraction =
        static_cast<double>(improved) /
        static_cast<double>(aggregate.rows.size());
    aggregate.negative_separated_fraction =
        static_cast<double>(separated) /
        static_cast<double>(aggregate.rows.size());
  }
  return aggregate;
}

std::vector<AlignmentTriple> load_triples(const std::filesystem::path& path,
                                          const Corpus& corpus,
                                          const std::vector<Query>& queries) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open triples file: " + path.string());

  std::map<std::string, const Query*> by_id;
  for (const auto& q : queries) by_id[q.id] = &q;

  std::vector<AlignmentTriple> triples;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::istringstream ss(line);
    std::string qid, pos_id, neg_id;
    if (!(ss >> qid >> pos_id >> neg_id)) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) +
                        ": expected query-id positive-id negative-id");
    }
    if (line_no == 1 && qid == "query-id") continue;

    auto qit = by_id.find(qid);
    if (qit == by_id.end()) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) +
                        ": unknown query id " + qid);
    }
    const Document* pos = corpus.find(pos_id);
    const Document* neg = corpus.find(neg_id);
    if (pos == nullptr || neg == nullptr) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) +
                        ": unknown document id " +
                        (pos == nullptr ? pos_id : neg_id));
    }
    triples.push_back(AlignmentTriple{*qit->second, *pos, *neg});
  }
  if (triples.empty()) {
    throw FormatError("triples file has no rows: " + path.string());
  }
  return triples;
}

std::vector<AlignmentTriple> sample_triples(const Corpus& corpus,
                                            const std::vector<Query>& queries,
                                            const Qrels& qrels,
                                            std::size_t max_triples,
                                            std::uint64_t seed) {
  std::map<std::string, const Query*> by_id;
  for (const auto& q : queries) by_id[q.id] = &q;

  std::mt19937_64 rng(seed);
  std::vector<AlignmentTriple> triples;
  // Qrels iteration is sorted by query id, so sampling is reproducible.
  for (const auto& [qid, grades] : qrels) {
    if (triples.size() >= max_triples) break;
    auto qit = by_id.find(qid);
    if (qit == by_id.end()) continue;

    const Document* positive = nullptr;
    std::vector<const Document*> negatives;
    for (const auto& [doc_id, grade] : grades) {
      const Document* doc = corpus.find(doc_id);
      if (doc == nullptr) continue;
      if (grade >= 1 && positive == nullptr) positive = doc;
      if (grade == 0) negatives.push_back(doc);
    }
    if (positive == nullptr || negatives.empty()) continue;

    std::uniform_int_distribution<std::size_t> pick(0, negatives.size() - 1);
    triples.push_back(
        AlignmentTriple{*qit->second, *positive, *negatives[pick(rng)]});
  }
  return triples;
}

std::string to_csv(const AggregateAlignment& aggregate,
                   const std::string& embedder_model_id) {
  std::ostringstream out;
  out << "# alignment-csv v1 embedder=" << embedder_model_id
      << " overlap=tokenized,builtin-stopwords\n";
  out << "query_id,positive_id,negative_id,"
         "cos_q_pos_before,cos_q_pos_after,cos_q_neg_before,cos_q_neg_after,"
         "pos_overlap_before,pos_overlap_after,"
         "neg_overlap_before,neg_overlap_after,"
         "positive_improved,negative_separated\n";
  for (const auto& r : aggregate.rows) {
    out << r.query_id << ',' << r.positive_id << ',' << r.negative_id << ','
        << format_cos(r.cos_query_positive_before) << ','
        << format_cos(r.cos_query_positive_after) << ','
        << format_cos(r.cos_query_negative_before) << ','
        << format_cos(r.cos_query_negative_after) << ','
        << r.positive_overlap_before.size() << ','
        << r.positive_overlap_after.size() << ','
        << r.negative_overlap_before.size() << ','
        << r.negative_overlap_after.size() << ','
        << (r.positive_improved ? 1 : 0) << ','
        << (r.negative_separated ? 1 : 0) << "\n";
  }
  out << "# positive_improved_fraction="
      << format_cos(aggregate.positive_improved_fraction)
      << " negative_separated_fraction="
      << format_cos(aggregate.negative_separated_fraction) << "\n";
  return out.str();
}

std::string to_text(const AggregateAlignment& aggregate,
                    const std::string& embedder_model_id) {
  std::ostringstream out;
  out << "alignment diagnostics (embedder: " << embedder_model_id
      << "; overlap: tokenized, builtin stopword list)\n";
  auto join = [](const std::vector<std::string>& tokens) {
    std::string s;
    for (const auto& t : tokens) {
      if (!s.empty()) s += ' ';
      s += t;
    }
    return s.empty() ? "-" : s;
  };
  for (const auto& r : aggregate.rows) {
    out << "\n" << r.query_id << "  +" << r.positive_id << "  -"
        << r.negative_id << "\n";
    out << "  positive: cos " << format_cos(r.cos_query_positive_before)
        << " -> " << format_cos(r.cos_query_positive_after)
        << (r.positive_improved ? "  (improved)" : "") << "\n";
    out << "    overlap before: " << join(r.positive_overlap_before) << "\n";
    out << "    overlap after:  " << join(r.positive_overlap_after) << "\n";
    out << "  negative: cos " << format_cos(r.cos_query_negative_before)
        << " -> " << format_cos(r.cos_query_negative_after)
        << (r.negative_separated ? "  (separated)" : "") << "\n";
    out << "    overlap before: " << join(r.negative_overlap_before) << "\n";
    out << "    overlap after:  " << join(r.negative_overlap_after) << "\n";
  }
  out << "\npositive pairs moved closer: "
      << format_cos(aggregate.positive_improved_fraction)
      << "\nnegative pairs moved apart:  "
      << format_cos(aggregate.negative_separated_fraction) << "\n";
  return out.str();
}

}  // namespace tcde::alignment
