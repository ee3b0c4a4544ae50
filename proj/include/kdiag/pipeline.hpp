// Copyright 2026 kdiag authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "kdiag/config.hpp"
#include "kdiag/retrieval.hpp"
#include "kdiag/scorer.hpp"
#include "kdiag/templates.hpp"

namespace kdiag::pipeline {

// Fixed linear stage order; run_all executes them in sequence.
const std::vector<std::string>& stage_names();
bool is_stage_name(const std::string& name);

struct StageOutcome {
  std::string stage;
  bool executed = false;  // false: inputs unchanged, outputs intact, skipped
  std::vector<std::string> outputs;  // artifact names relative to out_dir
};

// Owns one output directory: takes an exclusive lock, writes artifacts
// atomically, and keeps a stage ledger for resume decisions.
class Pipeline {
 public:
  explicit Pipeline(config::PipelineConfig cfg);
  ~Pipeline();
  Pipeline(const Pipeline&) = delete;
  Pipeline& operator=(const Pipeline&) = delete;

  void set_resume(bool on) { resume_ = on; }
  bool resume() const { return resume_; }

  StageOutcome run_stage(const std::string& name);
  std::vector<StageOutcome> run_all();

  const config::PipelineConfig& cfg() const { return cfg_; }
  std::filesystem::path artifact_path(const std::string& name) const;

 private:
  using InputMap = std::map<std::string, std::string>;

  std::string artifact_hash(const std::string& name) const;
  void require_artifact(const std::string& name, const std::string& stage) const;
  const std::string& config_fingerprint();
  bool can_skip(const std::string& stage, const InputMap& inputs) const;
  void record_stage(const std::string& stage, const InputMap& inputs,
                    const std::vector<std::string>& outputs);

  std::unique_ptr<scorer::Backend> make_backend(const config::BackendConfig& bc,
                                                const char* role) const;
  std::unique_ptr<retrieval::EmbeddingProvider> make_embedder() const;
  const templates::TemplateSet& templates();
  scorer::ScoreCache& score_cache();
  retrieval::EmbeddingCache& embedding_cache();

  std::vector<std::string> stage_ingest();
  std::vector<std::string> stage_embed();
  std::vector<std::string> stage_retrieve();
  std::vector<std::string> stage_diagnose();
  std::vector<std::string> stage_plan();
  std::vector<std::string> stage_synthesize();
  std::vector<std::string> stage_curriculum();
  std::vector<std::string> stage_eval_detect();
  std::vector<std::string> stage_report();

  config::PipelineConfig cfg_;
  bool resume_ = true;
  int lock_fd_ = -1;
  std::optional<std::string> config_fp_;
  std::optional<templates::TemplateSet> templates_;
  std::unique_ptr<scorer::ScoreCache> score_cache_;
  std::unique_ptr<retrieval::EmbeddingCache> embedding_cache_;
};

}  // namespace kdiag::pipeline
