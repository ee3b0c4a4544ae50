// Copyright 2026 kdiag authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "kdiag/corpus.hpp"

namespace kdiag::retrieval {

// Unit-normalized dense vector for one fact or query text; owner_id is the
// content hash of the embedded text.
struct EmbeddingVector {
  std::string owner_id;
  std::vector<double> values;

  size_t dim() const { return values.size(); }
};

struct Hit {
  std::string fact_id;
  double similarity = 0.0;
};

struct RetrievalResult {
  std::string query_id;
  std::vector<Hit> hits;  // sorted by (similarity desc, fact_id asc)
  size_t m = 0;
  bool index_empty = false;
};

class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual std::string id() const = 0;
  // One vector per input text, all with the same dimension.
  virtual std::vector<std::vector<double>> embed_batch(
      const std::vector<std::string>& texts) = 0;
};

// Deterministic hash-to-vector provider for tests and offline runs.
class StubEmbeddingProvider : public EmbeddingProvider {
 public:
  StubEmbeddingProvider(std::uint64_t seed, size_t dim);
  std::string id() const override;
  std::vector<std::vector<double>> embed_batch(
      const std::vector<std::string>& texts) override;

 private:
  std::uint64_t seed_;
  size_t dim_;
};

// Append-only embedding cache persisted as JSONL records
// {owner_id, dim, values}; keyed by the content hash of (provider id, text).
class EmbeddingCache {
 public:
  EmbeddingCache() = default;  // memory-only
  explicit EmbeddingCache(std::filesystem::path file);

  std::optional<std::vector<double>> lookup(const std::string& owner_id) const;
  void store(const std::string& owner_id, const std::vector<double>& values);
  size_t size() const;

  static std::string owner_id_for(const std::string& provider_id,
                                  const std::string& text);

 private:
  std::filesystem::path file_;
  mutable std::mutex mutex_;
  std::unordered_map<std::string, std::vector<double>> entries_;
};

// Embeds texts through the provider with caching and unit normalization.
// Batch dimension mismatches are hard errors; per-text failures (after the
// provider's own retries) surface as kdiag::Error from the provider.
std::vector<EmbeddingVector> embed(const std::vector<std::string>& texts,
                                   EmbeddingProvider& provider,
                                   EmbeddingCache* cache = nullptr);

struct IndexedVector {
  std::string fact_id;
  std::vector<double> values;
};

// Exact top-m by dot product over unit vectors; ties broken by fact_id
// ascending. Empty index yields empty hits with index_empty set.
RetrievalResult top_m(const std::vector<double>& query_vec,
                      const std::string& query_id,
                      const std::vector<IndexedVector>& index, size_t m);

struct KnowledgeSets {
  // query_id -> retrieved fact ids (descending similarity)
  std::map<std::string, std::vector<std::string>> sets;
  std::map<std::string, std::vector<double>> similarities;
  std::vector<std::string> failed_queries;
};

enum class QueryTextMode { QuestionOnly, QuestionAndOptions };

std::string query_embedding_text(const corpus::Query& query, QueryTextMode mode);

// Retrieves min(m, |facts|) facts for every query. Per-query failures are
// recorded and the batch continues.
KnowledgeSets build_knowledge_sets(const std::vector<corpus::Query>& queries,
                                   const std::vector<corpus::Fact>& facts,
                                   EmbeddingProvider& provider, size_t m,
                                   QueryTextMode mode = QueryTextMode::QuestionOnly,
                                   EmbeddingCache* cache = nullptr,
                                   size_t in_flight = 1);

}  // namespace kdiag::retrieval
