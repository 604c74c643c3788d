#include "tcde/corpus.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "tcde/errors.hpp"
#include "tcde/hash.hpp"
#include "tcde/log.hpp"

namespace tcde {

namespace {

using nlohmann::json;

[[noreturn]] void fail_line(const std::filesystem::path& path,
                            std::size_t line_no, const std::string& what) {
  throw FormatError(path.string() + ":" + std::to_string(line_no) + ": " +
                    what);
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open file: " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

bool looks_like_jsonl(const std::vector<std::string>& lines) {
  for (const auto& line : lines) {
    auto pos = line.find_first_not_of(" \t");
    if (pos == std::string::npos) continue;
    return line[pos] == '{';
  }
  return false;
}

std::string json_string_field(const json& j, const char* field,
                              const std::filesystem::path& path,
                              std::size_t line_no, bool required) {
  if (!j.contains(field)) {
    if (required) {
      fail_line(path, line_no, std::string("missing field \"") + field + "\"");
    }
    return "";
  }
  const json& v = j.at(field);
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<long long>());
  fail_line(path, line_no, std::string("field \"") + field +
                               "\" must be a string");
}

json parse_json_line(const std::string& line, const std::filesystem::path& path,
                     std::size_t line_no) {
  json j = json::parse(line, nullptr, false);
  if (j.is_discarded() || !j.is_object()) {
    fail_line(path, line_no, "not a JSON object");
  }
  return j;
}

// id<TAB>text with CRLF tolerance; used by the TSV fallbacks.
std::pair<std::string, std::string> split_tsv_pair(
    const std::string& line, const std::filesystem::path& path,
    std::size_t line_no) {
  auto tab = line.find('\t');
  if (tab == std::string::npos) {
    fail_line(path, line_no, "expected id<TAB>text");
  }
  return {line.substr(0, tab), line.substr(tab + 1)};
}

std::vector<std::string> split_ws(const std::string& line) {
  std::vector<std::string> fields;
  std::istringstream ss(line);
  std::string field;
  while (ss >> field) fields.push_back(field);
  return fields;
}

int parse_grade(const std::string& text, const std::filesystem::path& path,
                std::size_t line_no) {
  int value = 0;
  auto [ptr, ec] =
      std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    fail_line(path, line_no, "relevance grade must be an integer, got \"" +
                                 text + "\"");
  }
  if (value < 0) {
    fail_line(path, line_no, "relevance grade must be non-negative, got " +
                                 text);
  }
  return value;
}

}  // namespace

void Corpus::add(Document doc) {
  if (doc.id.empty()) throw FormatError("document with empty id");
  auto [it, inserted] = by_id_.emplace(doc.id, docs_.size());
  (void)it;
  if (!inserted) throw FormatError("duplicate document id: " + doc.id);
  docs_.push_back(std::move(doc));
}

const Document* Corpus::find(const std::string& id) const {
  auto it = by_id_.find(id);
  if (it == by_id_.end()) return nullptr;
  return &docs_[it->second];
}

std::string Corpus::content_digest() const {
  std::string buf;
  auto frame = [&buf](const std::string& s) {
    buf += std::to_string(s.size());
    buf += ':';
    buf += s;
  };
  for (const auto& d : docs_) {
    frame(d.id);
    frame(d.title);
    frame(d.text);
  }
  return sha256_hex(buf);
}

Corpus load_corpus(const std::filesystem::path& path) {
  auto lines = read_lines(path);
  Corpus corpus;
  bool jsonl = looks_like_jsonl(lines);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto& line = lines[i];
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::size_t line_no = i + 1;
    Document doc;
    if (jsonl) {
      json j = parse_json_line(line, path, line_no);
      doc.id = json_string_field(j, "_id", path, line_no, true);
      doc.title = json_string_field(j, "title", path, line_no, false);
      if (!j.contains("text")) fail_line(path, line_no, "missing field \"text\"");
      doc.text = json_string_field(j, "text", path, line_no, true);
    } else {
      auto [id, text] = split_tsv_pair(line, path, line_no);
      doc.id = std::move(id);
      doc.text = std::move(text);
    }
    if (doc.id.empty()) fail_line(path, line_no, "empty document id");
    try {
      corpus.add(std::move(doc));
    } catch (const FormatError& e) {
      fail_line(path, line_no, e.what());
    }
  }
  if (corpus.empty()) {
    log::warn("corpus file has no documents: " + path.string());
  }
  return corpus;
}

std::vector<Query> load_queries(const std::filesystem::path& path) {
  auto lines = read_lines(path);
  std::vector<Query> queries;
  std::unordered_map<std::string, std::size_t> seen;
  bool jsonl = looks_like_jsonl(lines);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto& line = lines[i];
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::size_t line_no = i + 1;
    Query q;
    if (jsonl) {
      json j = parse_json_line(line, path, line_no);
      q.id = json_string_field(j, "_id", path, line_no, true);
      q.text = json_string_field(j, "text", path, line_no, true);
    } else {
      auto [id, text] = split_tsv_pair(line, path, line_no);
      q.id = std::move(id);
      q.text = std::move(text);
    }
    if (q.id.empty()) fail_line(path, line_no, "empty query id");
    if (q.text.empty()) fail_line(path, line_no, "query with empty text: " + q.id);
    if (!seen.emplace(q.id, line_no).second) {
      fail_line(path, line_no, "duplicate query id: " + q.id);
    }
    queries.push_back(std::move(q));
  }
  if (queries.empty()) {
    log::warn("query file has no queries: " + path.string());
  }
  return queries;
}

Qrels load_qrels(const std::filesystem::path& path) {
  auto lines = read_lines(path);
  Qrels qrels;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto& line = lines[i];
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::size_t line_no = i + 1;
    auto fields = split_ws(line);
    if (i == 0 && !fields.empty() && fields[0] == "query-id") continue;
    std::string qid, did, grade_text;
    if (fields.size() == 3) {
      qid = fields[0];
      did = fields[1];
      grade_text = fields[2];
    } else if (fields.size() == 4) {
      // qid <iteration> doc-id grade
      qid = fields[0];
      did = fields[2];
      grade_text = fields[3];
    } else {
      fail_line(path, line_no,
                "expected query-id doc-id grade (3 or 4 columns), got " +
                    std::to_string(fields.size()));
    }
    int grade = parse_grade(grade_text, path, line_no);
    auto& per_query = qrels[qid];
    auto [it, inserted] = per_query.emplace(did, grade);
    if (!inserted) {
      log::warn("qrels: repeated pair (" + qid + ", " + did +
                ") at line " + std::to_string(line_no) + ", keeping last grade");
      it->second = grade;
    }
  }
  if (qrels.empty()) {
    throw FormatError("qrels file has no judgments: " + path.string());
  }
  return qrels;
}

std::string format_score(double score) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", score);
  return buf;
}

void validate_run(const Run& run) {
  for (const auto& [qid, entries] : run.by_query) {
    std::unordered_map<std::string, int> seen;
    double prev = 0.0;
    bool first = true;
    for (const auto& entry : entries) {
      if (entry.doc_id.empty()) {
        throw FormatError("run: empty doc id under query " + qid);
      }
      if (!seen.emplace(entry.doc_id, 1).second) {
        throw FormatError("run: duplicate doc id " + entry.doc_id +
                          " under query " + qid);
      }
      if (!first && entry.score > prev) {
        throw FormatError("run: scores increase within query " + qid);
      }
      prev = entry.score;
      first = false;
    }
  }
}

void write_run(const Run& run, const std::filesystem::path& path) {
  validate_run(run);
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write run file: " + path.string());
  for (const auto& [qid, entries] : run.by_query) {
    for (std::size_t rank = 0; rank < entries.size(); ++rank) {
      out << qid << " Q0 " << entries[rank].doc_id << ' ' << rank + 1 << ' '
          << format_score(entries[rank].score) << ' ' << run.tag << '\n';
    }
  }
  if (!out.good()) throw FormatError("write failed: " + path.string());
}

Run load_run(const std::filesystem::path& path) {
  auto lines = read_lines(path);
  Run run;
  bool tag_set = false;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto& line = lines[i];
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::size_t line_no = i + 1;
    auto fields = split_ws(line);
    if (fields.size() != 6) {
      fail_line(path, line_no, "expected 6 columns, got " +
                                   std::to_string(fields.size()));
    }
    const std::string& qid = fields[0];
    const std::string& did = fields[2];
    std::size_t rank = 0;
    {
      auto [ptr, ec] = std::from_chars(
          fields[3].data(), fields[3].data() + fields[3].size(), rank);
      if (ec != std::errc() || ptr != fields[3].data() + fields[3].size()) {
        fail_line(path, line_no, "bad rank: " + fields[3]);
      }
    }
    double score = 0.0;
    {
      auto [ptr, ec] = std::from_chars(
          fields[4].data(), fields[4].data() + fields[4].size(), score);
      if (ec != std::errc() || ptr != fields[4].data() + fields[4].size()) {
        fail_line(path, line_no, "bad score: " + fields[4]);
      }
    }
    auto& entries = run.by_query[qid];
    if (rank != entries.size() + 1) {
      fail_line(path, line_no, "rank " + std::to_string(rank) +
                                   " breaks contiguity for query " + qid +
                                   " (expected " +
                                   std::to_string(entries.size() + 1) + ")");
    }
    entries.push_back(RunEntry{did, score});
    if (!tag_set) {
      run.tag = fields[5];
      tag_set = true;
    } else if (run.tag != fields[5]) {
      fail_line(path, line_no, "inconsistent run tag: " + fields[5] +
                                   " (expected " + run.tag + ")");
    }
  }
  if (run.by_query.empty()) {
    throw FormatError("run file has no entries: " + path.string());
  }
  try {
    validate_run(run);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return run;
}

}  // namespace tcde
