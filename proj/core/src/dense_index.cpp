#include "tcde/dense_index.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <queue>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "tcde/errors.hpp"
#include "tcde/hash.hpp"
#include "tcde/log.hpp"
#include "tcde/sparse_index.hpp"

namespace tcde::dense {

namespace {

using nlohmann::json;

constexpr std::uint32_t kFormatVersion = 1;

std::string truncate_utf8(const std::string& text, std::size_t budget) {
  if (text.size() <= budget) return text;
  std::size_t cut = budget;
  while (cut > 0 &&
         (static_cast<unsigned char>(text[cut]) & 0xC0) == 0x80) {
    --cut;
  }
  return text.substr(0, cut);
}

// L2-normalizes in double precision; returns false for a zero vector.
bool normalize(std::vector<float>& v) {
  double sum = 0.0;
  for (float x : v) sum += static_cast<double>(x) * static_cast<double>(x);
  if (sum <= 0.0) return false;
  double inv = 1.0 / std::sqrt(sum);
  for (float& x : v) x = static_cast<float>(static_cast<double>(x) * inv);
  return true;
}

}  // namespace

std::vector<std::vector<float>> EmbeddingProvider::embed(
    const std::vector<std::string>& texts, TextRole role) {
  const std::string& prefix = role == TextRole::query
                                  ? prefixes().query_prefix
                                  : prefixes().passage_prefix;
  std::vector<std::string> prepared;
  prepared.reserve(texts.size());
  for (const auto& text : texts) {
    std::string with_prefix = prefix + text;
    std::string truncated = truncate_utf8(with_prefix, max_input_chars());
    if (truncated.size() < with_prefix.size()) truncations_.fetch_add(1);
    prepared.push_back(std::move(truncated));
  }

  std::vector<std::vector<float>> out;
  out.reserve(prepared.size());
  const std::size_t limit = std::max<std::size_t>(1, batch_limit());
  for (std::size_t start = 0; start < prepared.size(); start += limit) {
    std::size_t end = std::min(prepared.size(), start + limit);
    std::vector<std::string> batch(prepared.begin() + start,
                                   prepared.begin() + end);
    auto vectors = embed_raw(batch);
    if (vectors.size() != batch.size()) {
      throw ProtocolError("embedding provider returned " +
                          std::to_string(vectors.size()) + " vectors for " +
                          std::to_string(batch.size()) + " inputs");
    }
    for (auto& v : vectors) {
      if (dimension() != 0 && v.size() != dimension()) {
        throw ProtocolError("embedding dimension mismatch: got " +
                            std::to_string(v.size()) + ", expected " +
                            std::to_string(dimension()));
      }
      for (float x : v) {
        if (!std::isfinite(x)) {
          throw ProtocolError("embedding contains a non-finite component");
        }
      }
      out.push_back(std::move(v));
    }
  }
  return out;
}

HashingEmbedder::HashingEmbedder(std::size_t dim) : dim_(dim) {
  if (dim_ == 0) throw ConfigError("hashing embedder dimension must be > 0");
}

std::string HashingEmbedder::model_id() const {
  return "hashing-fnv1a64-" + std::to_string(dim_);
}

std::vector<std::vector<float>> HashingEmbedder::embed_raw(
    const std::vector<std::string>& texts) {
  std::vector<std::vector<float>> out;
  out.reserve(texts.size());
  sparse::TokenizerConfig tok;  // lowercase, no stopwords
  for (const auto& text : texts) {
    std::vector<double> acc(dim_, 0.0);
    for (const auto& token : sparse::tokenize(text, tok)) {
      acc[fnv1a64(token) % dim_] += 1.0;
    }
    double norm_sq = 0.0;
    for (double x : acc) norm_sq += x * x;
    std::vector<float> v(dim_, 0.0f);
    if (norm_sq > 0.0) {
      double inv = 1.0 / std::sqrt(norm_sq);
      for (std::size_t i = 0; i < dim_; ++i) {
        v[i] = static_cast<float>(acc[i] * inv);
      }
    }
    out.push_back(std::move(v));
  }
  return out;
}

HttpEmbeddingProvider::HttpEmbeddingProvider(EmbeddingProviderConfig config)
    : config_(std::move(config)) {
  if (config_.endpoint.empty()) {
    throw ConfigError("embedding endpoint is required for the HTTP provider");
  }
  prefixes_ = config_.prefixes;
}

std::size_t HttpEmbeddingProvider::dimension() const {
  if (config_.dimension != 0) return config_.dimension;
  return discovered_dim_.load();
}

std::vector<std::vector<float>> HttpEmbeddingProvider::embed_raw(
    const std::vector<std::string>& texts) {
  auto scheme_end = config_.endpoint.find("://");
  if (scheme_end == std::string::npos) {
    throw ConfigError("embedding endpoint must include a scheme: " +
                      config_.endpoint);
  }
  auto path_start = config_.endpoint.find('/', scheme_end + 3);
  std::string base = path_start == std::string::npos
                         ? config_.endpoint
                         : config_.endpoint.substr(0, path_start);
  std::string path = path_start == std::string::npos
                         ? "/"
                         : config_.endpoint.substr(path_start);

  json body = {{"model", config_.model}, {"input", texts}};
  std::string payload = body.dump();

  const char* credential = config_.credential_env.empty()
                               ? nullptr
                               : std::getenv(config_.credential_env.c_str());

  std::string last_detail = "transport failure";
  const int max_retries = std::max(0, config_.max_retries);
  for (int attempt = 0; attempt <= max_retries; ++attempt) {
    httplib::Client client(base);
    auto secs =
        std::chrono::duration_cast<std::chrono::seconds>(config_.timeout);
    auto rem_usec = std::chrono::duration_cast<std::chrono::microseconds>(
        config_.timeout - secs);
    client.set_connection_timeout(secs.count(), rem_usec.count());
    client.set_read_timeout(secs.count(), rem_usec.count());
    client.set_write_timeout(secs.count(), rem_usec.count());

    httplib::Headers headers;
    if (credential != nullptr && credential[0] != '\0') {
      headers.emplace("Authorization", std::string("Bearer ") + credential);
    }
    auto res = client.Post(path, headers, payload, "application/json");

    bool transient;
    if (!res) {
      transient = true;
      last_detail = httplib::to_string(res.error());
    } else if (res->status == 200) {
      json j = json::parse(res->body, nullptr, false);
      if (j.is_discarded() || !j.is_object() || !j.contains("data") ||
          !j["data"].is_array()) {
        throw ProtocolError("malformed embedding response");
      }
      std::vector<std::vector<float>> out;
      for (const auto& item : j["data"]) {
        if (!item.is_object() || !item.contains("embedding") ||
            !item["embedding"].is_array()) {
          throw ProtocolError("malformed embedding response entry");
        }
        out.push_back(item["embedding"].get<std::vector<float>>());
      }
      if (config_.dimension == 0 && !out.empty()) {
        discovered_dim_.store(out[0].size());
      }
      return out;
    } else {
      transient = res->status == 429 || res->status >= 500;
      last_detail = "HTTP " + std::to_string(res->status);
      if (!transient) {
        throw ProviderError("embedding provider returned " + last_detail);
      }
    }
    (void)transient;
    if (attempt < max_retries) {
      std::this_thread::sleep_for(config_.backoff_base * (1LL << attempt));
    }
  }
  throw RetryExhaustedError("embedding provider unavailable after " +
                            std::to_string(max_retries + 1) +
                            " attempts: " + last_detail);
}

double cosine(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) {
    throw ConfigError("cosine: dimension mismatch (" +
                      std::to_string(a.size()) + " vs " +
                      std::to_string(b.size()) + ")");
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    na += static_cast<double>(a[i]) * static_cast<double>(a[i]);
    nb += static_cast<double>(b[i]) * static_cast<double>(b[i]);
  }
  if (na <= 0.0 || nb <= 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

VectorIndex VectorIndex::build(const Corpus& corpus,
                               EmbeddingProvider& provider) {
  if (corpus.empty()) {
    throw FormatError("cannot build a vector index over an empty corpus");
  }
  std::vector<std::string> texts;
  texts.reserve(corpus.size());
  for (const auto& doc : corpus) texts.push_back(doc.full_text());

  auto vectors = provider.embed(texts, TextRole::passage);

  VectorIndex index;
  index.model_id_ = provider.model_id();
  index.dim_ = vectors.empty() ? provider.dimension() : vectors[0].size();
  index.doc_ids_.reserve(corpus.size());
  index.vectors_.reserve(corpus.size() * index.dim_);
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    auto& v = vectors[i];
    if (!normalize(v)) {
      ++index.zero_vectors_;
      log::warn("document embeds to the zero vector: " + corpus.at(i).id);
    }
    index.doc_ids_.push_back(corpus.at(i).id);
    index.vectors_.insert(index.vectors_.end(), v.begin(), v.end());
  }
  return index;
}

std::span<const float> VectorIndex::vector(std::size_t ordinal) const {
  if (ordinal >= doc_ids_.size()) {
    throw ConfigError("vector ordinal out of range");
  }
  return std::span<const float>(vectors_.data() + ordinal * dim_, dim_);
}

std::vector<ScoredDoc> VectorIndex::top_k(std::span<const float> query_vector,
                                          std::size_t k) const {
  if (query_vector.size() != dim_) {
    throw ConfigError("query vector dimension " +
                      std::to_string(query_vector.size()) +
                      " does not match index dimension " +
                      std::to_string(dim_));
  }
  std::vector<ScoredDoc> results;
  if (k == 0) return results;

  struct Candidate {
    std::size_t ordinal;
    double score;
  };
  auto better = [this](const Candidate& a, const Candidate& b) {
    if (a.score != b.score) return a.score > b.score;
    return doc_ids_[a.ordinal] < doc_ids_[b.ordinal];
  };
  std::priority_queue<Candidate, std::vector<Candidate>, decltype(better)>
      heap(better);

  for (std::size_t ordinal = 0; ordinal < doc_ids_.size(); ++ordinal) {
    const float* row = vectors_.data() + ordinal * dim_;
    double dot = 0.0;
    for (std::size_t i = 0; i < dim_; ++i) {
      dot += static_cast<double>(query_vector[i]) *
             static_cast<double>(row[i]);
    }
    Candidate candidate{ordinal, dot};
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
    results.push_back(ScoredDoc{doc_ids_[c.ordinal], c.score});
  }
  return results;
}

void VectorIndex::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  json meta = {
      {"format", "tcde-dense"},
      {"version", kFormatVersion},
      {"model_id", model_id_},
      {"dimension", dim_},
      {"doc_count", doc_ids_.size()},
      {"zero_vectors", zero_vectors_},
  };
  std::ofstream meta_out(dir / "meta.json", std::ios::binary | std::ios::trunc);
  if (!meta_out) throw FormatError("cannot write " + (dir / "meta.json").string());
  meta_out << meta.dump(2) << '\n';

  std::ofstream ids(dir / "doc_ids.txt", std::ios::binary | std::ios::trunc);
  if (!ids) throw FormatError("cannot write " + (dir / "doc_ids.txt").string());
  for (const auto& id : doc_ids_) ids << id << '\n';

  std::ofstream vecs(dir / "vectors.bin", std::ios::binary | std::ios::trunc);
  if (!vecs) throw FormatError("cannot write " + (dir / "vectors.bin").string());
  vecs.write(reinterpret_cast<const char*>(vectors_.data()),
             static_cast<std::streamsize>(vectors_.size() * sizeof(float)));
  if (!vecs.good()) {
    throw FormatError("write failed: " + (dir / "vectors.bin").string());
  }
}

VectorIndex VectorIndex::load(const std::filesystem::path& dir) {
  std::ifstream meta_in(dir / "meta.json", std::ios::binary);
  if (!meta_in) {
    throw FormatError("dense index: missing " + (dir / "meta.json").string());
  }
  json meta = json::parse(meta_in, nullptr, false);
  if (meta.is_discarded() || !meta.is_object() ||
      meta.value("format", "") != "tcde-dense") {
    throw FormatError("dense index: bad meta.json in " + dir.string());
  }
  if (meta.value("version", 0u) != kFormatVersion) {
    throw FormatError("dense index: unsupported version " +
                      std::to_string(meta.value("version", 0u)) + " in " +
                      dir.string());
  }

  VectorIndex index;
  index.model_id_ = meta.value("model_id", "");
  index.dim_ = meta.value("dimension", std::size_t{0});
  index.zero_vectors_ = meta.value("zero_vectors", std::size_t{0});
  std::size_t doc_count = meta.value("doc_count", std::size_t{0});
  if (index.dim_ == 0 || doc_count == 0) {
    throw FormatError("dense index: degenerate shape in " + dir.string());
  }

  std::ifstream ids(dir / "doc_ids.txt", std::ios::binary);
  if (!ids) {
    throw FormatError("dense index: missing " + (dir / "doc_ids.txt").string());
  }
  std::string line;
  while (std::getline(ids, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) index.doc_ids_.push_back(line);
  }
  if (index.doc_ids_.size() != doc_count) {
    throw FormatError("dense index: doc id count mismatch in " + dir.string());
  }

  std::ifstream vecs(dir / "vectors.bin", std::ios::binary | std::ios::ate);
  if (!vecs) {
    throw FormatError("dense index: missing " + (dir / "vectors.bin").string());
  }
  auto bytes = static_cast<std::size_t>(vecs.tellg());
  if (bytes != doc_count * index.dim_ * sizeof(float)) {
    throw FormatError("dense index: vectors.bin has unexpected size in " +
                      dir.string());
  }
  index.vectors_.resize(doc_count * index.dim_);
  vecs.seekg(0);
  vecs.read(reinterpret_cast<char*>(index.vectors_.data()),
            static_cast<std::streamsize>(bytes));
  if (!vecs) {
    throw FormatError("dense index: failed reading vectors.bin in " +
                      dir.string());
  }
  return index;
}

std::vector<ScoredDoc> search(const VectorIndex& index,
                              std::string_view query_text, std::size_t k,
                              EmbeddingProvider& provider) {
  if (provider.model_id() != index.model_id()) {
    throw ConfigError("embedding model mismatch: index built with " +
                      index.model_id() + ", searching with " +
                      provider.model_id());
  }
  auto vectors =
      provider.embed({std::string(query_text)}, TextRole::query);
  auto& q = vectors.at(0);
  normalize(q);  // zero queries stay zero and score 0 everywhere
  return index.top_k(q, k);
}

}  // namespace tcde::dense
