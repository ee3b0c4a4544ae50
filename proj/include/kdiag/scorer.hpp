// Copyright 2026 kdiag authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "kdiag/templates.hpp"

namespace kdiag::scorer {

// One scoring call: prior when knowledge is absent, posterior when present.
struct ScoreRequest {
  std::string query_id;
  std::string question;
  std::vector<std::string> options;
  std::optional<std::string> knowledge;
  std::optional<std::string> knowledge_id;
  std::string prompt_template_id = "plain";
};

// Per-option negative log-likelihoods, natural log, summed over option tokens.
struct OptionScores {
  std::string query_id;
  std::vector<double> nll;         // finite, >= 0
  std::vector<int> token_counts;   // >= 1
  std::optional<std::string> knowledge_id;
};

struct GenerationResult {
  std::string query_id;
  std::string text;  // may be empty; finish_reason says why
  std::string finish_reason;
};

struct ScoredOption {
  double nll = 0.0;
  int token_count = 1;
};

struct GenerationOutput {
  std::string text;
  std::string finish_reason = "stop";
};

// A language model reduced to two calls: option likelihood and generation.
// Implementations must be safe for concurrent use.
class Backend {
 public:
  virtual ~Backend() = default;
  // Stable identity (model, endpoint, script); part of every cache key.
  virtual std::string id() const = 0;
  virtual ScoredOption score(const std::string& prompt,
                             const std::string& option) = 0;
  virtual GenerationOutput generate(const std::string& prompt) = 0;
};

// Content-addressed score/generation cache persisted as JSONL records
// {kind, key, ...}; keys are SHA-256 over (backend id, prompt, option).
class ScoreCache {
 public:
  ScoreCache() = default;  // memory-only
  explicit ScoreCache(std::filesystem::path file);

  std::optional<ScoredOption> lookup_score(const std::string& key) const;
  void store_score(const std::string& key, const ScoredOption& value);
  std::optional<GenerationOutput> lookup_generation(const std::string& key) const;
  void store_generation(const std::string& key, const GenerationOutput& value);
  size_t size() const;

  static std::string score_key(const std::string& backend_id,
                               const std::string& prompt,
                               const std::string& option);
  static std::string generation_key(const std::string& backend_id,
                                    const std::string& prompt);

 private:
  void append(const nlohmann::json& rec);

  std::filesystem::path file_;
  mutable std::mutex mutex_;
  std::unordered_map<std::string, ScoredOption> scores_;
  std::unordered_map<std::string, GenerationOutput> generations_;
};

// Renders the request through its template and scores every option.
// Cached results are byte-identical to fresh ones.
OptionScores score_options(const ScoreRequest& req, Backend& backend,
                           const templates::TemplateSet& templates,
                           ScoreCache* cache = nullptr);

// Free-form generation under the request's template (prior rendering).
GenerationResult generate(const ScoreRequest& req, Backend& backend,
                          const templates::TemplateSet& templates,
                          ScoreCache* cache = nullptr);

// Generation from an already-rendered prompt (synthesis, preprocessing).
GenerationOutput generate_with_cache(Backend& backend, const std::string& prompt,
                                     ScoreCache* cache = nullptr);

// --- Deterministic mock backend -------------------------------------------

// Explicit behavior table. A rule fires when every `when` substring appears
// in the rendered prompt and no `when_absent` substring does.
struct MockScoreRule {
  std::vector<std::string> when;
  std::vector<std::string> when_absent;
  std::map<std::string, double> nll;  // option text -> NLL
};

struct MockGenerationRule {
  std::vector<std::string> when;
  std::string text;
  std::string finish_reason = "stop";
};

struct MockScript {
  std::vector<MockScoreRule> scores;
  std::vector<MockGenerationRule> generations;

  nlohmann::json to_json() const;
  static MockScript from_json(const nlohmann::json& j);
};

// Fully offline backend: scripted answers first, then seed-derived fallbacks.
// Without a seed, any unscripted request is an error.
class MockBackend : public Backend {
 public:
  explicit MockBackend(std::optional<std::uint64_t> seed, MockScript script = {});

  std::string id() const override;
  ScoredOption score(const std::string& prompt, const std::string& option) override;
  GenerationOutput generate(const std::string& prompt) override;

  // Calls that reached the backend (cache hits never do).
  size_t score_calls() const { return score_calls_.load(); }
  size_t generation_calls() const { return generation_calls_.load(); }

 private:
  std::optional<std::uint64_t> seed_;
  MockScript script_;
  std::string id_;
  std::atomic<size_t> score_calls_{0};
  std::atomic<size_t> generation_calls_{0};
};

}  // namespace kdiag::scorer
