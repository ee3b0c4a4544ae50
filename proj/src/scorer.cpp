// Copyright 2026 kdiag authors
// SPDX-License-Identifier: Apache-2.0

#include "kdiag/scorer.hpp"

#include <cmath>
#include <fstream>

#include "kdiag/errors.hpp"
#include "kdiag/hashing.hpp"
#include "kdiag/jsonl.hpp"
#include "kdiag/text.hpp"

namespace kdiag::scorer {

ScoreCache::ScoreCache(std::filesystem::path file) : file_(std::move(file)) {
  if (file_.empty() || !std::filesystem::exists(file_)) return;
  jsonl::for_each_record(file_, [&](size_t, const nlohmann::json& rec) {
    if (!rec.contains("kind") || !rec.contains("key")) return;
    const auto kind = rec["kind"].get<std::string>();
    const auto key = rec["key"].get<std::string>();
    if (kind == "score") {
      scores_[key] = {rec["nll"].get<double>(), rec["tokens"].get<int>()};
    } else if (kind == "gen") {
      generations_[key] = {rec["text"].get<std::string>(),
                           rec["finish_reason"].get<std::string>()};
    }
  });
}

std::optional<ScoredOption> ScoreCache::lookup_score(const std::string& key) const {
  std::lock_guard<std::mutex> lock(mutex_);
  auto it = scores_.find(key);
  if (it == scores_.end()) return std::nullopt;
  return it->second;
}

void ScoreCache::store_score(const std::string& key, const ScoredOption& value) {
  std::lock_guard<std::mutex> lock(mutex_);
  auto [it, inserted] = scores_.emplace(key, value);
  if (!inserted) return;  // deterministic values; duplicates are benign
  append({{"kind", "score"},
          {"key", key},
          {"nll", value.nll},
          {"tokens", value.token_count}});
}

std::optional<GenerationOutput> ScoreCache::lookup_generation(
    const std::string& key) const {
  std::lock_guard<std::mutex> lock(mutex_);
  auto it = generations_.find(key);
  if (it == generations_.end()) return std::nullopt;
  return it->second;
}

void ScoreCache::store_generation(const std::string& key,
                                  const GenerationOutput& value) {
  std::lock_guard<std::mutex> lock(mutex_);
  auto [it, inserted] = generations_.emplace(key, value);
  if (!inserted) return;
  append({{"kind", "gen"},
          {"key", key},
          {"text", value.text},
          {"finish_reason", value.finish_reason}});
}

size_t ScoreCache::size() const {
  std::lock_guard<std::mutex> lock(mutex_);
  return scores_.size() + generations_.size();
}

// Callers hold mutex_.
void ScoreCache::append(const nlohmann::json& rec) {
  if (file_.empty()) return;
  auto dir = file_.parent_path();
  if (!dir.empty()) std::filesystem::create_directories(dir);
  std::ofstream out(file_, std::ios::app);
  if (!out) throw_io("cannot append to score cache: " + file_.string());
  out << rec.dump() << '\n';
}

std::string ScoreCache::score_key(const std::string& backend_id,
                                  const std::string& prompt,
                                  const std::string& option) {
  return hashing::sha256_hex(backend_id + "\x1f" + prompt + "\x1f" + option);
}

std::string ScoreCache::generation_key(const std::string& backend_id,
                                       const std::string& prompt) {
  return hashing::sha256_hex(backend_id + "\x1fgen\x1f" + prompt);
}

namespace {

std::string render_request(const ScoreRequest& req,
                           const templates::TemplateSet& templates) {
  std::string prompt = templates.render_score(req.prompt_template_id, req.question,
                                              req.options, req.knowledge);
  // Invariant: posterior prompts carry the knowledge verbatim, priors never do.
  if (req.knowledge && prompt.find(*req.knowledge) == std::string::npos) {
    throw_state("posterior prompt lost its knowledge text (template " +
                req.prompt_template_id + ")");
  }
  return prompt;
}

}  // namespace

OptionScores score_options(const ScoreRequest& req, Backend& backend,
                           const templates::TemplateSet& templates,
                           ScoreCache* cache) {
  if (req.options.empty()) throw_invalid("score request needs options");
  const std::string prompt = render_request(req, templates);
  OptionScores out;
  out.query_id = req.query_id;
  out.knowledge_id = req.knowledge_id;
  out.nll.reserve(req.options.size());
  out.token_counts.reserve(req.options.size());
  for (const auto& option : req.options) {
    const std::string key = ScoreCache::score_key(backend.id(), prompt, option);
    std::optional<ScoredOption> scored;
    if (cache) scored = cache->lookup_score(key);
    if (!scored) {
      scored = backend.score(prompt, option);
      if (cache) cache->store_score(key, *scored);
    }
    if (!std::isfinite(scored->nll)) {
      throw_backend("non-finite NLL for query " + req.query_id);
    }
    // Probabilities never exceed 1, so a summed NLL below 0 is a backend bug.
    if (scored->nll < -1e-9) {
      throw_backend("negative NLL " + std::to_string(scored->nll) + " for query " +
                    req.query_id);
    }
    out.nll.push_back(scored->nll < 0.0 ? 0.0 : scored->nll);
    out.token_counts.push_back(scored->token_count < 1 ? 1 : scored->token_count);
  }
  return out;
}

GenerationResult generate(const ScoreRequest& req, Backend& backend,
                          const templates::TemplateSet& templates,
                          ScoreCache* cache) {
  if (text::trim(req.question).empty()) {
    throw_invalid("generation request has an empty question");
  }
  const std::string prompt = render_request(req, templates);
  auto output = generate_with_cache(backend, prompt, cache);
  return {req.query_id, std::move(output.text), std::move(output.finish_reason)};
}

GenerationOutput generate_with_cache(Backend& backend, const std::string& prompt,
                                     ScoreCache* cache) {
  const std::string key = ScoreCache::generation_key(backend.id(), prompt);
  if (cache) {
    if (auto hit = cache->lookup_generation(key)) return *hit;
  }
  auto output = backend.generate(prompt);
  if (cache) cache->store_generation(key, output);
  return output;
}

}  // namespace kdiag::scorer
