#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tcde/corpus.hpp"
#include "tcde/dense_index.hpp"
#include "tcde/expansion.hpp"

namespace tcde::alignment {

// (query, judged-relevant doc, judged-non-relevant doc). Used to measure
// how expansion moves a query/document pair in embedding space; the
// inequalities are reported, never asserted — head-to-head comparisons are
// diagnostics, not guarantees.
struct AlignmentTriple {
  Query query;
  Document positive;
  Document negative;
};

// Sorted, deduplicated intersection of the two token sets after removing a
// small builtin English stopword list. The same tokenizer used for sparse
// retrieval produces the sets.
std::vector<std::string> lexical_overlap(std::string_view a,
                                         std::string_view b);

struct AlignmentReport {
  std::string query_id;
  std::string positive_id;
  std::string negative_id;

  double cos_query_positive_before = 0.0;
  double cos_query_positive_after = 0.0;
  double cos_query_negative_before = 0.0;
  double cos_query_negative_after = 0.0;

  std::vector<std::string> positive_overlap_before;
  std::vector<std::string> positive_overlap_after;
  std::vector<std::string> negative_overlap_before;
  std::vector<std::string> negative_overlap_after;

  // Strict inequalities on the cosines above: did the expanded positive
  // pair move closer, and the expanded negative pair move apart?
  bool positive_improved = false;
  bool negative_separated = false;
};

// Expands the query (n_query topics) and both documents (n_doc topics) and
// compares embedding cosines before vs after. n == 0 on either side is the
// identity (before == after on that side). Document titles are folded into
// the text before expansion, mirroring the retrieval pipeline.
AlignmentReport analyze_triple(const AlignmentTriple& triple,
                               expansion::Expander& expander,
                               dense::EmbeddingProvider& provider,
                               int n_query, int n_doc);

struct AggregateAlignment {
  std::vector<AlignmentReport> rows;
  double positive_improved_fraction = 0.0;
  double negative_separated_fraction = 0.0;
};

AggregateAlignment analyze_triples(std::span<const AlignmentTriple> triples,
                                   expansion::Expander& expander,
                                   dense::EmbeddingProvider& provider,
                                   int n_query, int n_doc);

// TSV: query-id<TAB>positive-doc-id<TAB>negative-doc-id, optional header
// starting with "query-id". Ids must resolve against the corpus/queries.
std::vector<AlignmentTriple> load_triples(const std::filesystem::path& path,
                                          const Corpus& corpus,
                                          const std::vector<Query>& queries);

// Builds up to max_triples triples from judgments: the positive is the
// first relevant doc (ascending doc id), the negative is drawn uniformly
// from judged grade-0 docs. Deterministic for a fixed seed.
std::vector<AlignmentTriple> sample_triples(const Corpus& corpus,
                                            const std::vector<Query>& queries,
                                            const Qrels& qrels,
                                            std::size_t max_triples,
                                            std::uint64_t seed);

// The CSV/text headers record which embedder produced the cosines and how
// overlap sets were computed, so reports are interpretable on their own.
std::string to_csv(const AggregateAlignment& aggregate,
                   const std::string& embedder_model_id);
std::string to_text(const AggregateAlignment& aggregate,
                    const std::string& embedder_model_id);

}  // namespace tcde::alignment
