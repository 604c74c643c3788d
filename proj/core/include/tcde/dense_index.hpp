#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "tcde/corpus.hpp"

namespace tcde::dense {

enum class TextRole { query, passage };

struct PrefixConfig {
  // Role prefixes follow the instruction-tuned embedder convention: the
  // same string embeds differently as a query than as a passage.
  std::string query_prefix = "query: ";
  std::string passage_prefix = "passage: ";

  bool operator==(const PrefixConfig&) const = default;
};

// Contract every embedding backend satisfies: fixed dimension, bounded
// batch size, role prefixes, and input truncation. embed() handles the
// shared policy (prefix, truncate, batch, validate); backends implement
// embed_raw for one batch.
class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;

  virtual std::string model_id() const = 0;
  virtual std::size_t dimension() const = 0;
  virtual std::size_t batch_limit() const { return 16; }
  virtual std::size_t max_input_chars() const { return 8192; }
  virtual const PrefixConfig& prefixes() const { return prefixes_; }
  void set_prefixes(PrefixConfig p) { prefixes_ = std::move(p); }

  // Prefixes by role, truncates over-long inputs (counted), splits into
  // batches of at most batch_limit(), and validates that every returned
  // vector has dimension() finite entries. Output order matches input
  // order.
  std::vector<std::vector<float>> embed(const std::vector<std::string>& texts,
                                        TextRole role);

  std::uint64_t truncation_count() const { return truncations_.load(); }

 protected:
  virtual std::vector<std::vector<float>> embed_raw(
      const std::vector<std::string>& texts) = 0;

  PrefixConfig prefixes_;
  std::atomic<std::uint64_t> truncations_{0};
};

// Deterministic offline embedder: each token adds 1.0 at slot
// fnv1a64(token) % dim, then the vector is L2-normalized. Texts with no
// tokens embed to the zero vector. Role prefixes make query/passage
// embeddings differ, mirroring how instruction-tuned embedders behave.
class HashingEmbedder : public EmbeddingProvider {
 public:
  explicit HashingEmbedder(std::size_t dim = 256);

  std::string model_id() const override;
  std::size_t dimension() const override { return dim_; }
  std::size_t batch_limit() const override { return 64; }

 protected:
  std::vector<std::vector<float>> embed_raw(
      const std::vector<std::string>& texts) override;

 private:
  std::size_t dim_;
};

struct EmbeddingProviderConfig {
  std::string endpoint;
  std::string model;
  std::string credential_env = "TCDE_EMBEDDING_API_KEY";
  std::size_t dimension = 0;  // 0 = accept the first response's dimension
  std::size_t batch_limit = 16;
  std::size_t max_input_chars = 8192;
  PrefixConfig prefixes;
  int max_retries = 3;
  std::chrono::milliseconds backoff_base{250};
  std::chrono::milliseconds timeout{30000};
};

// HTTP backend for an embeddings endpoint
// ({"model","input":[...]} -> {"data":[{"embedding":[...]},...]}), with the
// same transient-failure retry policy as the LLM client.
class HttpEmbeddingProvider : public EmbeddingProvider {
 public:
  explicit HttpEmbeddingProvider(EmbeddingProviderConfig config);

  std::string model_id() const override { return config_.model; }
  std::size_t dimension() const override;
  std::size_t batch_limit() const override { return config_.batch_limit; }
  std::size_t max_input_chars() const override {
    return config_.max_input_chars;
  }

 protected:
  std::vector<std::vector<float>> embed_raw(
      const std::vector<std::string>& texts) override;

 private:
  EmbeddingProviderConfig config_;
  mutable std::atomic<std::size_t> discovered_dim_{0};
};

// Cosine similarity; dimensions must match (ConfigError otherwise). If
// either vector has zero norm the similarity is 0.
double cosine(std::span<const float> a, std::span<const float> b);

// Flat store of unit-normalized document vectors searched exhaustively.
// Zero vectors (empty documents) are kept and flagged; they score 0 against
// everything and only surface through tie-breaking.
class VectorIndex {
 public:
  static VectorIndex build(const Corpus& corpus, EmbeddingProvider& provider);

  std::size_t size() const { return doc_ids_.size(); }
  std::size_t dimension() const { return dim_; }
  const std::string& model_id() const { return model_id_; }
  const std::string& doc_id(std::size_t ordinal) const {
    return doc_ids_.at(ordinal);
  }
  std::span<const float> vector(std::size_t ordinal) const;
  std::size_t zero_vector_count() const { return zero_vectors_; }

  // Exact top-k by inner product (== cosine, vectors are unit norm), ties
  // by ascending doc id. Independent of any provider, so it can be checked
  // against a brute-force oracle directly.
  std::vector<ScoredDoc> top_k(std::span<const float> query_vector,
                               std::size_t k) const;

  // Directory layout: meta.json + vectors.bin (packed little-endian f32)
  // + doc ids. Version or shape mismatch throws FormatError.
  void save(const std::filesystem::path& dir) const;
  static VectorIndex load(const std::filesystem::path& dir);

 private:
  std::size_t dim_ = 0;
  std::string model_id_;
  std::vector<std::string> doc_ids_;
  std::vector<float> vectors_;  // row-major, size() * dim_
  std::size_t zero_vectors_ = 0;
};

// Embeds the query text (query role) and searches. The provider's model id
// must match the one the index was built with (ConfigError otherwise).
std::vector<ScoredDoc> search(const VectorIndex& index,
                              std::string_view query_text, std::size_t k,
                              EmbeddingProvider& provider);

}  // namespace tcde::dense
