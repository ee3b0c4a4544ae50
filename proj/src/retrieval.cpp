// Copyright 2026 kdiag authors
// SPDX-License-Identifier: Apache-2.0

#include "kdiag/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "kdiag/errors.hpp"
#include "kdiag/hashing.hpp"
#include "kdiag/jsonl.hpp"
#include "kdiag/parallel.hpp"
#include "kdiag/text.hpp"

namespace kdiag::retrieval {

namespace {

void unit_normalize(std::vector<double>& v) {
  double norm_sq = 0.0;
  for (double x : v) norm_sq += x * x;
  if (norm_sq <= 0.0) throw_invalid("cannot normalize zero embedding vector");
  double inv = 1.0 / std::sqrt(norm_sq);
  for (double& x : v) x *= inv;
}

}  // namespace

StubEmbeddingProvider::StubEmbeddingProvider(std::uint64_t seed, size_t dim)
    : seed_(seed), dim_(dim) {
  if (dim_ == 0) throw_config("stub embedder dimension must be positive");
}

std::string StubEmbeddingProvider::id() const {
  return "stub:" + std::to_string(seed_) + ":" + std::to_string(dim_);
}

std::vector<std::vector<double>> StubEmbeddingProvider::embed_batch(
    const std::vector<std::string>& texts) {
  std::vector<std::vector<double>> out;
  out.reserve(texts.size());
  for (const auto& t : texts) {
    std::vector<double> v(dim_);
    std::uint64_t base = text::fnv1a64(t, text::fnv1a64(std::to_string(seed_)));
    for (size_t j = 0; j < dim_; ++j) {
      std::uint64_t h = text::fnv1a64(std::to_string(j), base);
      v[j] = text::unit_double(h) * 2.0 - 1.0;
    }
    out.push_back(std::move(v));
  }
  return out;
}

EmbeddingCache::EmbeddingCache(std::filesystem::path file) : file_(std::move(file)) {
  if (file_.empty() || !std::filesystem::exists(file_)) return;
  jsonl::for_each_record(file_, [&](size_t, const nlohmann::json& rec) {
    if (!rec.contains("owner_id") || !rec.contains("values")) return;
    entries_[rec["owner_id"].get<std::string>()] =
        rec["values"].get<std::vector<double>>();
  });
}

std::optional<std::vector<double>> EmbeddingCache::lookup(
    const std::string& owner_id) const {
  std::lock_guard<std::mutex> lock(mutex_);
  auto it = entries_.find(owner_id);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

void EmbeddingCache::store(const std::string& owner_id,
                           const std::vector<double>& values) {
  std::lock_guard<std::mutex> lock(mutex_);
  auto [it, inserted] = entries_.emplace(owner_id, values);
  if (!inserted) return;  // identical by construction
  if (file_.empty()) return;
  auto dir = file_.parent_path();
  if (!dir.empty()) std::filesystem::create_directories(dir);
  std::ofstream out(file_, std::ios::app);
  if (!out) throw_io("cannot append to embedding cache: " + file_.string());
  nlohmann::json rec = {
      {"owner_id", owner_id}, {"dim", values.size()}, {"values", values}};
  out << rec.dump() << '\n';
}

size_t EmbeddingCache::size() const {
  std::lock_guard<std::mutex> lock(mutex_);
  return entries_.size();
}

std::string EmbeddingCache::owner_id_for(const std::string& provider_id,
                                         const std::string& text) {
  return hashing::content_id(provider_id + "\x1f" + text);
}

std::vector<EmbeddingVector> embed(const std::vector<std::string>& texts,
                                   EmbeddingProvider& provider,
                                   EmbeddingCache* cache) {
  std::vector<EmbeddingVector> out(texts.size());
  std::vector<size_t> missing;
  for (size_t i = 0; i < texts.size(); ++i) {
    out[i].owner_id = EmbeddingCache::owner_id_for(provider.id(), texts[i]);
    if (cache) {
      if (auto hit = cache->lookup(out[i].owner_id)) {
        out[i].values = std::move(*hit);
        continue;
      }
    }
    missing.push_back(i);
  }
  if (!missing.empty()) {
    std::vector<std::string> batch;
    batch.reserve(missing.size());
    for (size_t i : missing) batch.push_back(texts[i]);
    auto vectors = provider.embed_batch(batch);
    if (vectors.size() != batch.size()) {
      throw_backend("embedding provider returned " + std::to_string(vectors.size()) +
                    " vectors for " + std::to_string(batch.size()) + " texts");
    }
    const size_t batch_dim = vectors[0].size();
    for (size_t k = 0; k < vectors.size(); ++k) {
      if (vectors[k].size() != batch_dim) {
        throw_invalid("embedding dimension mismatch within batch: " +
                      std::to_string(batch_dim) + " vs " +
                      std::to_string(vectors[k].size()));
      }
      unit_normalize(vectors[k]);
      size_t i = missing[k];
      out[i].values = std::move(vectors[k]);
      if (cache) cache->store(out[i].owner_id, out[i].values);
    }
  }
  // All vectors in one call must agree on dimension, cached or fresh.
  for (const auto& v : out) {
    if (v.dim() != out[0].dim()) {
      throw_invalid("embedding dimension mismatch within batch: " +
                    std::to_string(out[0].dim()) + " vs " + std::to_string(v.dim()));
    }
  }
  return out;
}

RetrievalResult top_m(const std::vector<double>& query_vec,
                      const std::string& query_id,
                      const std::vector<IndexedVector>& index, size_t m) {
  if (m == 0) throw_invalid("top_m requires m >= 1");
  RetrievalResult result;
  result.query_id = query_id;
  result.m = m;
  if (index.empty()) {
    result.index_empty = true;
    return result;
  }
  std::vector<Hit> scored;
  scored.reserve(index.size());
  for (const auto& entry : index) {
    if (entry.values.size() != query_vec.size()) {
      throw_invalid("query/index dimension mismatch: " +
                    std::to_string(query_vec.size()) + " vs " +
                    std::to_string(entry.values.size()));
    }
    double dot = 0.0;
    for (size_t j = 0; j < query_vec.size(); ++j) dot += query_vec[j] * entry.values[j];
    scored.push_back({entry.fact_id, dot});
  }
  auto better = [](const Hit& a, const Hit& b) {
    if (a.similarity != b.similarity) return a.similarity > b.similarity;
    return a.fact_id < b.fact_id;
  };
  size_t keep = std::min(m, scored.size());
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(keep),
                    scored.end(), better);
  scored.resize(keep);
  result.hits = std::move(scored);
  return result;
}

std::string query_embedding_text(const corpus::Query& query, QueryTextMode mode) {
  if (mode == QueryTextMode::QuestionOnly) return query.question;
  std::string out = query.question;
  for (const auto& opt : query.options) {
    out += '\n';
    out += opt;
  }
  return out;
}

KnowledgeSets build_knowledge_sets(const std::vector<corpus::Query>& queries,
                                   const std::vector<corpus::Fact>& facts,
                                   EmbeddingProvider& provider, size_t m,
                                   QueryTextMode mode, EmbeddingCache* cache,
                                   size_t in_flight) {
  if (facts.empty()) throw_invalid("cannot build knowledge sets on an empty fact index");
  KnowledgeSets out;
  if (queries.empty()) return out;

  std::vector<std::string> fact_texts;
  fact_texts.reserve(facts.size());
  for (const auto& f : facts) fact_texts.push_back(text::normalize(f.text));
  auto fact_vectors = embed(fact_texts, provider, cache);
  std::vector<IndexedVector> index;
  index.reserve(facts.size());
  for (size_t i = 0; i < facts.size(); ++i) {
    index.push_back({facts[i].fact_id, std::move(fact_vectors[i].values)});
  }

  std::vector<std::optional<RetrievalResult>> results(queries.size());
  std::vector<std::string> failures(queries.size());
  parallel_for(queries.size(), in_flight, [&](size_t i) {
    try {
      auto vecs = embed({query_embedding_text(queries[i], mode)}, provider, cache);
      results[i] = top_m(vecs[0].values, queries[i].query_id, index, m);
    } catch (const std::exception& e) {
      failures[i] = e.what();
    }
  });

  for (size_t i = 0; i < queries.size(); ++i) {
    if (!results[i]) {
      out.failed_queries.push_back(queries[i].query_id);
      continue;
    }
    auto& ids = out.sets[queries[i].query_id];
    auto& sims = out.similarities[queries[i].query_id];
    for (const auto& hit : results[i]->hits) {
      ids.push_back(hit.fact_id);
      sims.push_back(hit.similarity);
    }
  }
  return out;
}

}  // namespace kdiag::retrieval
