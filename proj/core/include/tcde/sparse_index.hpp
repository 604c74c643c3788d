#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "tcde/corpus.hpp"

namespace tcde::sparse {

struct TokenizerConfig {
  bool lowercase = true;
  // Tokens removed after case folding. Empty by default: repeated query
  // terms are a scoring signal here, so nothing is dropped unless asked.
  std::vector<std::string> stopwords;

  bool operator==(const TokenizerConfig&) const = default;
};

// Unicode-aware word splitter: a token is a maximal run of ASCII
// alphanumerics and non-ASCII codepoints (so accented and non-Latin words
// survive), everything else separates. Case folding covers ASCII, Latin-1,
// Greek and Cyrillic letters.
std::vector<std::string> tokenize(std::string_view text,
                                  const TokenizerConfig& config = {});

struct Bm25Params {
  double k1 = 1.5;
  double b = 0.75;

  bool operator==(const Bm25Params&) const = default;
};

struct Posting {
  std::uint32_t doc = 0;  // ordinal into the doc table
  std::uint32_t tf = 0;
};

struct SearchOptions {
  // When true, queries that match fewer than k documents are padded with
  // zero-scored unmatched documents in ascending id order.
  bool pad_zero_scores = false;
};

// Immutable inverted index over a corpus snapshot. Building is
// single-threaded on purpose: posting lists and document ordinals must not
// depend on scheduling.
class InvertedIndex {
 public:
  // Throws FormatError when the corpus is empty or no document yields a
  // single token (avg document length would be undefined).
  static InvertedIndex build(const Corpus& corpus,
                             const TokenizerConfig& config = {});

  std::size_t doc_count() const { return doc_ids_.size(); }
  double avg_doc_length() const { return avg_doc_length_; }
  const std::string& doc_id(std::uint32_t ordinal) const {
    return doc_ids_.at(ordinal);
  }
  std::uint32_t doc_length(std::uint32_t ordinal) const {
    return doc_lengths_.at(ordinal);
  }
  std::size_t vocabulary_size() const { return postings_.size(); }
  std::uint32_t doc_frequency(const std::string& term) const;
  // nullptr for out-of-vocabulary terms.
  const std::vector<Posting>* postings(const std::string& term) const;
  const TokenizerConfig& tokenizer() const { return tokenizer_; }

  // Directory layout: meta.json + postings.bin. Loading a directory written
  // by an incompatible version throws FormatError.
  void save(const std::filesystem::path& dir) const;
  static InvertedIndex load(const std::filesystem::path& dir);

 private:
  std::vector<std::string> doc_ids_;
  std::vector<std::uint32_t> doc_lengths_;
  double avg_doc_length_ = 0.0;
  std::unordered_map<std::string, std::vector<Posting>> postings_;
  TokenizerConfig tokenizer_;
};

// idf(t) = ln(1 + (N - df + 0.5) / (df + 0.5)); always positive.
double bm25_idf(std::size_t doc_count, std::uint32_t doc_frequency);

// Score of one document for a bag of query tokens:
//   sum over distinct terms of qtf * idf * tf*(k1+1) / (tf + k1*(1-b+b*dl/avgdl))
// qtf is the raw count of the term in the query; repeated terms scale their
// contribution linearly, which is what makes query-text repetition an
// effective weighting device.
double bm25_score(const InvertedIndex& index,
                  std::span<const std::string> query_tokens,
                  std::uint32_t doc_ordinal, const Bm25Params& params = {});

// Document-at-a-time evaluation over the union of query-term postings,
// keeping the top k in a bounded heap. Ties are broken by ascending doc id
// (lexicographic). Queries with no indexed terms return an empty list (plus
// a warning) unless pad_zero_scores is set.
std::vector<ScoredDoc> search(const InvertedIndex& index,
                              std::string_view query_text, std::size_t k,
                              const Bm25Params& params = {},
                              const SearchOptions& options = {});

}  // namespace tcde::sparse
