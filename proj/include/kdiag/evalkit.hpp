// Copyright 2026 kdiag authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "kdiag/corpus.hpp"
#include "kdiag/diagnose.hpp"
#include "kdiag/scorer.hpp"

namespace kdiag::evalkit {

enum class Method { GoldenLabel, Perplexity, Random, RelativeEntropy };

std::string method_name(Method method);
// Whether the method never consults gold labels.
bool method_label_free(Method method);

struct DetectionRun {
  Method method = Method::GoldenLabel;
  std::vector<std::string> flagged;  // sorted, unique, subset of evaluated ids
  std::optional<double> tau;
  std::optional<std::uint64_t> seed;
  std::optional<size_t> sample_size;
};

struct DetectionMetrics {
  double precision = 0.0;  // percents, [0, 100]
  double recall = 0.0;
  double f1 = 0.0;
  long long tp = 0;
  long long fp = 0;
  long long fn = 0;
  bool empty_warning = false;  // both truth and flagged were empty
};

// Per-query evidence persisted so flagged sets can be recomputed externally.
struct GoldenRecord {
  std::string query_id;
  int gold = -1;
  std::optional<int> predicted;  // absent when no option letter parsed
  bool wrong = false;
};

struct PerplexityRecord {
  std::string query_id;
  int gold = -1;
  int predicted = -1;
  bool tie = false;
  std::vector<double> nll;
  std::vector<int> token_counts;
};

struct GoldenResult {
  DetectionRun run;
  std::vector<GoldenRecord> records;
};

struct PerplexityResult {
  DetectionRun run;
  std::vector<PerplexityRecord> records;
  long long ties = 0;
};

struct EvalOptions {
  std::string template_id = "plain";
  size_t in_flight = 1;
  bool length_normalize = true;  // perplexity ordering; raw sums when off
  bool flag_unparseable = true;  // golden-label policy for unparseable text
};

// Chain-of-thought generation per query; the first "(X)" letter is the
// model's answer and mismatches against gold define the truth set.
GoldenResult golden_label_detect(const std::vector<corpus::Query>& queries,
                                 scorer::Backend& backend,
                                 const templates::TemplateSet& templates,
                                 const EvalOptions& options = {},
                                 scorer::ScoreCache* cache = nullptr);

// Lowest length-normalized option NLL is the model's answer; ties go to the
// lowest option index and are counted.
PerplexityResult perplexity_detect(const std::vector<corpus::Query>& queries,
                                   scorer::Backend& backend,
                                   const templates::TemplateSet& templates,
                                   const EvalOptions& options = {},
                                   scorer::ScoreCache* cache = nullptr);

// Uniform sample of exactly truth_size ids without replacement, seeded and
// platform-stable.
DetectionRun random_detect(const std::vector<std::string>& query_ids,
                           size_t truth_size, std::uint64_t seed);

// Flags every query appearing in at least one deficiency. Label-free.
DetectionRun re_detect(const std::vector<diagnose::Deficiency>& deficiencies,
                       double tau);

DetectionMetrics score_detection(const DetectionRun& run,
                                 const std::set<std::string>& truth);

struct ReportRow {
  Method method = Method::GoldenLabel;
  bool label_free = false;
  DetectionMetrics metrics;
  std::string params;  // rendered (tau/seed/sample size) summary
};

// Aligned text table with Method | Label Free | Precision | Recall | F1
// columns plus confusion counts.
std::string render_report(const std::vector<ReportRow>& rows);

}  // namespace kdiag::evalkit
