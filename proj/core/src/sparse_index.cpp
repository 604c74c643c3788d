#include "tcde/sparse_index.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <queue>

#include <json.hpp>

#include "tcde/errors.hpp"
#include "tcde/log.hpp"

namespace tcde::sparse {

namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'T', 'C', 'D', 'E', 'S', 'P', 'I', 'X'};
constexpr std::uint32_t kFormatVersion = 1;

bool is_continuation(unsigned char c) { return (c & 0xC0) == 0x80; }

// Decodes one UTF-8 codepoint at s[i]; malformed bytes decode to U+FFFD so
// they act as separators. Returns the byte length consumed (>= 1).
std::size_t decode_utf8(std::string_view s, std::size_t i,
                        std::uint32_t& cp) {
  unsigned char c = static_cast<unsigned char>(s[i]);
  if (c < 0x80) {
    cp = c;
    return 1;
  }
  if ((c >> 5) == 0x6 && i + 1 < s.size() &&
      is_continuation(static_cast<unsigned char>(s[i + 1]))) {
    cp = (static_cast<std::uint32_t>(c & 0x1F) << 6) |
         (static_cast<unsigned char>(s[i + 1]) & 0x3F);
    return 2;
  }
  if ((c >> 4) == 0xE && i + 2 < s.size() &&
      is_continuation(static_cast<unsigned char>(s[i + 1])) &&
      is_continuation(static_cast<unsigned char>(s[i + 2]))) {
    cp = (static_cast<std::uint32_t>(c & 0x0F) << 12) |
         ((static_cast<unsigned char>(s[i + 1]) & 0x3F) << 6) |
         (static_cast<unsigned char>(s[i + 2]) & 0x3F);
    return 3;
  }
  if ((c >> 3) == 0x1E && i + 3 < s.size() &&
      is_continuation(static_cast<unsigned char>(s[i + 1])) &&
      is_continuation(static_cast<unsigned char>(s[i + 2])) &&
      is_continuation(static_cast<unsigned char>(s[i + 3]))) {
    cp = (static_cast<std::uint32_t>(c & 0x07) << 18) |
         ((static_cast<unsigned char>(s[i + 1]) & 0x3F) << 12) |
         ((static_cast<unsigned char>(s[i + 2]) & 0x3F) << 6) |
         (static_cast<unsigned char>(s[i + 3]) & 0x3F);
    return 4;
  }
  cp = 0xFFFD;
  return 1;
}

void encode_utf8(std::uint32_t cp, std::string& out) {
  if (cp < 0x80) {
    out += static_cast<char>(cp);
  } else if (cp < 0x800) {
    out += static_cast<char>(0xC0 | (cp >> 6));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else if (cp < 0x10000) {
    out += static_cast<char>(0xE0 | (cp >> 12));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else {
    out += static_cast<char>(0xF0 | (cp >> 18));
    out += static_cast<char>(0x80 | ((cp >> 12) & 0x3F));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  }
}

// ASCII alphanumerics and most non-ASCII codepoints are token characters;
// common Unicode punctuation blocks act as separators so bullets/dashes in
// LLM output never leak into terms.
bool is_token_char(std::uint32_t cp) {
  if (cp < 0x80) {
    return (cp >= '0' && cp <= '9') || (cp >= 'a' && cp <= 'z') ||
           (cp >= 'A' && cp <= 'Z');
  }
  if (cp >= 0xA1 && cp <= 0xBF) return false;   // Latin-1 punctuation/signs
  if (cp == 0xD7 || cp == 0xF7) return false;   // multiplication/division
  if (cp >= 0x2000 && cp <= 0x206F) return false;  // general punctuation
  if (cp >= 0x3000 && cp <= 0x303F) return false;  // CJK punctuation
  if (cp == 0xFFFD) return false;               // malformed input
  return true;
}

// Case folding for ASCII, Latin-1, Greek and Cyrillic letters; everything
// else maps to itself.
std::uint32_t fold_codepoint(std::uint32_t cp) {
  if (cp >= 'A' && cp <= 'Z') return cp + 0x20;
  if (cp >= 0xC0 && cp <= 0xDE && cp != 0xD7) return cp + 0x20;  // Latin-1
  if (cp >= 0x391 && cp <= 0x3A9 && cp != 0x3A2) return cp + 0x20;  // Greek
  if (cp >= 0x410 && cp <= 0x42F) return cp + 0x20;  // Cyrillic А..Я
  if (cp >= 0x400 && cp <= 0x40F) return cp + 0x50;  // Cyrillic Ѐ..Џ
  return cp;
}

void write_u32(std::ofstream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
void write_u64(std::ofstream& out, std::uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
void write_string(std::ofstream& out, const std::string& s) {
  write_u32(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::uint32_t read_u32(std::ifstream& in, const std::string& what) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!in) throw FormatError("sparse index: truncated " + what);
  return v;
}
std::uint64_t read_u64(std::ifstream& in, const std::string& what) {
  std::uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!in) throw FormatError("sparse index: truncated " + what);
  return v;
}
std::string read_string(std::ifstream& in, const std::string& what) {
  std::uint32_t len = read_u32(in, what);
  std::string s(len, '\0');
  in.read(s.data(), static_cast<std::streamsize>(len));
  if (!in) throw FormatError("sparse index: truncated " + what);
  return s;
}

// Distinct query terms with raw counts, in first-occurrence order. The
// summation order of term contributions is pinned to this order so scores
// are bit-reproducible.
std::vector<std::pair<std::string, std::uint32_t>> distinct_terms(
    std::span<const std::string> tokens) {
  std::vector<std::pair<std::string, std::uint32_t>> terms;
  // Views key into the caller's token storage, which outlives this map.
  std::unordered_map<std::string_view, std::size_t> index;
  for (const auto& token : tokens) {
    auto it = index.find(std::string_view(token));
    if (it == index.end()) {
      terms.emplace_back(token, 1);
      index.emplace(std::string_view(token), terms.size() - 1);
    } else {
      ++terms[it->second].second;
    }
  }
  return terms;
}

double term_contribution(double qtf, double idf, double tf, double k1,
                         double b, double dl, double avgdl) {
  return qtf * idf * (tf * (k1 + 1.0)) / (tf + k1 * (1.0 - b + b * dl / avgdl));
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text,
                                  const TokenizerConfig& config) {
  std::unordered_set<std::string> stop(config.stopwords.begin(),
                                       config.stopwords.end());
  std::vector<std::string> tokens;
  std::string current;
  auto flush = [&]() {
    if (!current.empty()) {
      if (stop.find(current) == stop.end()) tokens.push_back(current);
      current.clear();
    }
  };
  std::size_t i = 0;
  while (i < text.size()) {
    std::uint32_t cp = 0;
    i += decode_utf8(text, i, cp);
    if (is_token_char(cp)) {
      encode_utf8(config.lowercase ? fold_codepoint(cp) : cp, current);
    } else {
      flush();
    }
  }
  flush();
  return tokens;
}

InvertedIndex InvertedIndex::build(const Corpus& corpus,
                                   const TokenizerConfig& config) {
  if (corpus.empty()) {
    throw FormatError("cannot build index over an empty corpus");
  }
  InvertedIndex index;
  index.tokenizer_ = config;
  index.doc_ids_.reserve(corpus.size());
  index.doc_lengths_.reserve(corpus.size());

  std::uint64_t total_length = 0;
  for (std::size_t ordinal = 0; ordinal < corpus.size(); ++ordinal) {
    const Document& doc = corpus.at(ordinal);
    auto tokens = tokenize(doc.full_text(), config);
    index.doc_ids_.push_back(doc.id);
    index.doc_lengths_.push_back(static_cast<std::uint32_t>(tokens.size()));
    total_length += tokens.size();

    std::unordered_map<std::string, std::uint32_t> tf;
    for (auto& token : tokens) ++tf[std::move(token)];
    for (auto& [term, count] : tf) {
      index.postings_[term].push_back(
          Posting{static_cast<std::uint32_t>(ordinal), count});
    }
  }
  if (total_length == 0) {
    throw FormatError(
        "degenerate corpus: no document produced any tokens");
  }
  index.avg_doc_length_ =
      static_cast<double>(total_length) / static_cast<double>(corpus.size());
  return index;
}

std::uint32_t InvertedIndex::doc_frequency(const std::string& term) const {
  auto it = postings_.find(term);
  if (it == postings_.end()) return 0;
  return static_cast<std::uint32_t>(it->second.size());
}

const std::vector<Posting>* InvertedIndex::postings(
    const std::string& term) const {
  auto it = postings_.find(term);
  if (it == postings_.end()) return nullptr;
  return &it->second;
}

double bm25_idf(std::size_t doc_count, std::uint32_t doc_frequency) {
  double n = static_cast<double>(doc_count);
  double df = static_cast<double>(doc_frequency);
  return std::log(1.0 + (n - df + 0.5) / (df + 0.5));
}

double bm25_score(const InvertedIndex& index,
                  std::span<const std::string> query_tokens,
                  std::uint32_t doc_ordinal, const Bm25Params& params) {
  auto terms = distinct_terms(query_tokens);
  double dl = index.doc_length(doc_ordinal);
  double score = 0.0;
  for (const auto& [term, qtf] : terms) {
    const auto* list = index.postings(term);
    if (list == nullptr) continue;
    auto it = std::lower_bound(
        list->begin(), list->end(), doc_ordinal,
        [](const Posting& p, std::uint32_t doc) { return p.doc < doc; });
    if (it == list->end() || it->doc != doc_ordinal) continue;
    double idf = bm25_idf(index.doc_count(),
                          static_cast<std::uint32_t>(list->size()));
    score += term_contribution(qtf, idf, it->tf, params.k1, params.b, dl,
                               index.avg_doc_length());
  }
  return score;
}

std::vector<ScoredDoc> search(const InvertedIndex& index,
                              std::string_view query_text, std::size_t k,
                              const Bm25Params& params,
                              const SearchOptions& options) {
  std::vector<ScoredDoc> results;
  if (k == 0) return results;

  auto tokens = tokenize(query_text, index.tokenizer());
  if (tokens.empty()) {
    log::warn("query tokenized to nothing, returning no results");
    return results;
  }
  auto terms = distinct_terms(tokens);

  struct TermCursor {
    const std::vector<Posting>* list;
    std::size_t pos = 0;
    double weight = 0.0;  // qtf * idf, constant per term
  };
  std::vector<TermCursor> cursors;
  for (const auto& [term, qtf] : terms) {
    const auto* list = index.postings(term);
    if (list == nullptr || list->empty()) continue;
    double idf = bm25_idf(index.doc_count(),
                          static_cast<std::uint32_t>(list->size()));
    cursors.push_back(TermCursor{list, 0, static_cast<double>(qtf) * idf});
  }

  // Bounded selection: the heap keeps the current top k with the worst
  // candidate on top. better(a, b) == "a outranks b".
  struct Candidate {
    std::uint32_t ordinal;
    double score;
  };
  auto better = [&index](const Candidate& a, const Candidate& b) {
    if (a.score != b.score) return a.score > b.score;
    return index.doc_id(a.ordinal) < index.doc_id(b.ordinal);
  };
  std::priority_queue<Candidate, std::vector<Candidate>, decltype(better)>
      heap(better);

  const double k1 = params.k1;
  const double b = params.b;
  const double avgdl = index.avg_doc_length();

  // Document-at-a-time merge over the posting cursors.
  while (true) {
    std::uint32_t doc = std::numeric_limits<std::uint32_t>::max();
    bool any = false;
    for (const auto& cursor : cursors) {
      if (cursor.pos < cursor.list->size()) {
        any = true;
        doc = std::min(doc, (*cursor.list)[cursor.pos].doc);
      }
    }
    if (!any) break;

    double dl = index.doc_length(doc);
    double norm = k1 * (1.0 - b + b * dl / avgdl);
    double score = 0.0;
    for (auto& cursor : cursors) {
      if (cursor.pos < cursor.list->size() &&
          (*cursor.list)[cursor.pos].doc == doc) {
        double tf = (*cursor.list)[cursor.pos].tf;
        score += cursor.weight * (tf * (k1 + 1.0)) / (tf + norm);
        ++cursor.pos;
      }
    }

    Candidate candidate{doc, score};
    if (heap.size() < k) {
      heap.push(candidate);
    } else if (better(candidate, heap.top())) {
      heap.pop();
      heap.push(candidate);
    }
  }

  std::vector<Candidate> kept;
  kept.reserve(heap.size());
  while (!heap.empty()) {
    kept.push_back(heap.top());
    heap.pop();
  }
  std::sort(kept.begin(), kept.end(), better);
  results.reserve(kept.size());
  for (const auto& c : kept) {
    results.push_back(ScoredDoc{index.doc_id(c.ordinal), c.score});
  }

  if (options.pad_zero_scores && results.size() < k) {
    std::unordered_set<std::string_view> matched;
    for (const auto& r : results) matched.insert(r.doc_id);
    std::vector<std::string> rest;
    for (std::uint32_t d = 0; d < index.doc_count(); ++d) {
      if (matched.find(index.doc_id(d)) == matched.end()) {
        rest.push_back(index.doc_id(d));
      }
    }
    std::sort(rest.begin(), rest.end());
    for (auto& id : rest) {
      if (results.size() >= k) break;
      results.push_back(ScoredDoc{std::move(id), 0.0});
    }
  }
  return results;
}

void InvertedIndex::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);

  json meta = {
      {"format", "tcde-sparse"},
      {"version", kFormatVersion},
      {"doc_count", doc_ids_.size()},
      {"avg_doc_length", avg_doc_length_},
      {"vocabulary_size", postings_.size()},
      {"tokenizer",
       {{"lowercase", tokenizer_.lowercase},
        {"stopwords", tokenizer_.stopwords}}},
  };
  std::ofstream meta_out(dir / "meta.json", std::ios::binary | std::ios::trunc);
  if (!meta_out) throw FormatError("cannot write " + (dir / "meta.json").string());
  meta_out << meta.dump(2) << '\n';

  std::ofstream out(dir / "postings.bin", std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + (dir / "postings.bin").string());
  out.write(kMagic, sizeof(kMagic));
  write_u32(out, kFormatVersion);
  write_u64(out, doc_ids_.size());
  for (std::size_t i = 0; i < doc_ids_.size(); ++i) {
    write_string(out, doc_ids_[i]);
    write_u32(out, doc_lengths_[i]);
  }
  // Terms are written sorted so the file bytes do not depend on hash-map
  // iteration order.
  std::vector<const std::string*> terms;
  terms.reserve(postings_.size());
  for (const auto& [term, list] : postings_) terms.push_back(&term);
  std::sort(terms.begin(), terms.end(),
            [](const std::string* a, const std::string* b) { return *a < *b; });
  write_u64(out, terms.size());
  for (const auto* term : terms) {
    const auto& list = postings_.at(*term);
    write_string(out, *term);
    write_u64(out, list.size());
    for (const auto& posting : list) {
      write_u32(out, posting.doc);
      write_u32(out, posting.tf);
    }
  }
  if (!out.good()) {
    throw FormatError("write failed: " + (dir / "postings.bin").string());
  }
}

InvertedIndex InvertedIndex::load(const std::filesystem::path& dir) {
  std::ifstream meta_in(dir / "meta.json", std::ios::binary);
  if (!meta_in) {
    throw FormatError("sparse index: missing " + (dir / "meta.json").string());
  }
  json meta = json::parse(meta_in, nullptr, false);
  if (meta.is_discarded() || !meta.is_object() ||
      meta.value("format", "") != "tcde-sparse") {
    throw FormatError("sparse index: bad meta.json in " + dir.string());
  }
  if (meta.value("version", 0u) != kFormatVersion) {
    throw FormatError("sparse index: unsupported version " +
                      std::to_string(meta.value("version", 0u)) + " in " +
                      dir.string());
  }

  std::ifstream in(dir / "postings.bin", std::ios::binary);
  if (!in) {
    throw FormatError("sparse index: missing " +
                      (dir / "postings.bin").string());
  }
  char magic[8] = {};
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw FormatError("sparse index: bad magic in " +
                      (dir / "postings.bin").string());
  }
  if (read_u32(in, "version") != kFormatVersion) {
    throw FormatError("sparse index: postings version mismatch in " +
                      dir.string());
  }

  InvertedIndex index;
  if (meta.contains("tokenizer") && meta["tokenizer"].is_object()) {
    index.tokenizer_.lowercase = meta["tokenizer"].value("lowercase", true);
    index.tokenizer_.stopwords =
        meta["tokenizer"].value("stopwords", std::vector<std::string>{});
  }

  std::uint64_t doc_count = read_u64(in, "doc table");
  index.doc_ids_.reserve(doc_count);
  index.doc_lengths_.reserve(doc_count);
  std::uint64_t total_length = 0;
  for (std::uint64_t i = 0; i < doc_count; ++i) {
    index.doc_ids_.push_back(read_string(in, "doc id"));
    index.doc_lengths_.push_back(read_u32(in, "doc length"));
    total_length += index.doc_lengths_.back();
  }
  if (doc_count == 0) {
    throw FormatError("sparse index: empty doc table in " + dir.string());
  }
  index.avg_doc_length_ =
      static_cast<double>(total_length) / static_cast<double>(doc_count);

  std::uint64_t term_count = read_u64(in, "vocabulary");
  for (std::uint64_t t = 0; t < term_count; ++t) {
    std::string term = read_string(in, "term");
    std::uint64_t list_size = read_u64(in, "postings list");
    std::vector<Posting> list;
    list.reserve(list_size);
    for (std::uint64_t p = 0; p < list_size; ++p) {
      Posting posting;
      posting.doc = read_u32(in, "posting doc");
      posting.tf = read_u32(in, "posting tf");
      if (posting.doc >= doc_count) {
        throw FormatError("sparse index: posting references unknown doc in " +
                          dir.string());
      }
      list.push_back(posting);
    }
    index.postings_.emplace(std::move(term), std::move(list));
  }
  return index;
}

}  // namespace tcde::sparse
