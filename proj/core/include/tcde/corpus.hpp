#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

namespace tcde {

struct Document {
  std::string id;
  std::string title;
  std::string text;

  // What retrieval sees: title folded in front of the body when present.
  std::string full_text() const {
    if (title.empty()) return text;
    if (text.empty()) return title;
    return title + " " + text;
  }

  bool operator==(const Document&) const = default;
};

struct Query {
  std::string id;
  std::string text;

  bool operator==(const Query&) const = default;
};

// Ordered collection of documents with unique ids. Iteration order is the
// order documents were added (file order for loaded corpora).
class Corpus {
 public:
  // Throws FormatError if the id is empty or already present.
  void add(Document doc);

  std::size_t size() const { return docs_.size(); }
  bool empty() const { return docs_.empty(); }
  const Document& at(std::size_t index) const { return docs_.at(index); }
  const std::vector<Document>& docs() const { return docs_; }

  // nullptr when absent.
  const Document* find(const std::string& id) const;

  auto begin() const { return docs_.begin(); }
  auto end() const { return docs_.end(); }

  // SHA-256 over every record (id, title, text) in order. Stable content
  // identity used as one input of index fingerprints.
  std::string content_digest() const;

 private:
  std::vector<Document> docs_;
  std::unordered_map<std::string, std::size_t> by_id_;
};

// query id -> (doc id -> relevance grade). std::map keeps iteration sorted,
// which downstream code relies on for deterministic output.
using QueryGrades = std::map<std::string, int>;
using Qrels = std::map<std::string, QueryGrades>;

struct RunEntry {
  std::string doc_id;
  double score = 0.0;

  bool operator==(const RunEntry&) const = default;
};

// A ranked retrieval result set, one entry list per query, ranked best
// first. Scores are expected to be non-increasing within a query.
struct Run {
  std::string tag = "tcde";
  std::map<std::string, std::vector<RunEntry>> by_query;

  bool operator==(const Run&) const = default;
};

struct ScoredDoc {
  std::string doc_id;
  double score = 0.0;

  bool operator==(const ScoredDoc&) const = default;
};

// Loads a corpus from JSONL ({"_id","title","text"}, one object per line)
// or, as a fallback for files whose first non-empty line is not a JSON
// object, from TSV (id<TAB>text). Throws FormatError with the offending
// line number on malformed input, duplicate ids, or an unreadable path.
Corpus load_corpus(const std::filesystem::path& path);

// Same formats as load_corpus; JSONL objects use {"_id","text"}.
// Queries with empty text are rejected. An empty file yields an empty
// vector plus a warning.
std::vector<Query> load_queries(const std::filesystem::path& path);

// TSV: query-id<TAB>doc-id<TAB>grade, with an optional header line starting
// with "query-id". Grades must be non-negative integers. A repeated
// (query, doc) pair keeps the last grade and logs a warning.
Qrels load_qrels(const std::filesystem::path& path);

// Six-column whitespace-separated exchange format:
//   query-id Q0 doc-id rank score tag
// Ranks start at 1 and are contiguous per query; scores are formatted with
// six significant digits.
void write_run(const Run& run, const std::filesystem::path& path);
Run load_run(const std::filesystem::path& path);

// Throws FormatError on rank gaps, duplicate doc ids within a query, or
// increasing scores. write_run validates implicitly.
void validate_run(const Run& run);

// Score formatting shared by write_run and tests: shortest representation
// with six significant digits ("%.6g").
std::string format_score(double score);

}  // namespace tcde
