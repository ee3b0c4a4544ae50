// Copyright 2026 kdiag authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "kdiag/corpus.hpp"
#include "kdiag/diagnose.hpp"
#include "kdiag/scorer.hpp"

namespace kdiag::remedy {

enum class SynthStyle { Reasoning, Math };

std::string style_name(SynthStyle style);

// One synthesis request per deficiency; n_examples comes from the budget.
struct SynthesisJob {
  std::string query_id;
  std::string knowledge_id;
  double re = 0.0;
  std::string group;
  int n_examples = 0;
  SynthStyle style = SynthStyle::Reasoning;
  std::string knowledge_text;
  std::string reference_example;  // the source query rendered label-free
  std::string prompt;             // filled by build_prompt
};

// Per-group deficiency counts and the planned example totals.
struct TotalsReport {
  std::vector<std::pair<std::string, long long>> group_deficiencies;
  std::vector<std::pair<std::string, long long>> group_examples;
  long long total_examples = 0;
  std::optional<long long> expected_total;
  std::vector<std::string> warnings;
};

struct PlanResult {
  std::vector<SynthesisJob> jobs;  // same order as the deficiency list
  TotalsReport totals;
};

// Parser output for one well-formed block; provenance is attached later.
struct ParsedExample {
  std::string question;
  std::vector<std::string> options;
  int answer_index = -1;
  std::string explanation;  // the solution text for math style
};

struct ParseIssue {
  int block = 0;  // 1-based block number in the response
  std::string reason;
};

struct ParseReport {
  int found = 0;
  int malformed = 0;
  bool truncated = false;  // generator over-produced; extras dropped
  std::vector<ParseIssue> issues;
};

// One training example with provenance back to its deficiency.
struct SynthExample {
  std::string example_id;
  std::string question;
  std::vector<std::string> options;
  int answer_index = -1;
  std::string explanation;
  std::string query_id;      // deficiency ref
  std::string knowledge_id;  // deficiency ref
  int ordinal = 0;           // position within the job's parsed output
  double re = 0.0;
  std::string group;
};

struct JobReport {
  std::string query_id;
  std::string knowledge_id;
  int attempts = 0;
  int found = 0;
  int malformed = 0;
  bool failed = false;  // zero parseable examples after all retries
  std::vector<ParseIssue> issues;
};

struct SynthesisOutcome {
  std::vector<SynthExample> examples;
  std::vector<JobReport> reports;
};

// Ascending by (source-deficiency RE, deficiency id, ordinal).
inline constexpr const char* kManifestFormatVersion = "kdiag.manifest.v1";

struct CurriculumManifest {
  std::vector<SynthExample> entries;
  std::string format_version = kManifestFormatVersion;
};

// One job per deficiency with the budgeted example count; style chosen by
// the first query tag found in style_map ("reasoning"/"math"), defaulting to
// reasoning. Totals cover every group in the deficiency list; a configured
// expected_total that disagrees with the arithmetic becomes a warning.
PlanResult plan_budgets(const std::vector<diagnose::Deficiency>& deficiencies,
                        const std::vector<corpus::Query>& queries,
                        const std::vector<corpus::Fact>& facts,
                        const std::map<std::string, std::string>& style_map = {},
                        std::optional<long long> expected_total = std::nullopt);

// Fills {knowledge}, {examples}, {n} in the style's template and stores the
// result on the job. The knowledge text and reference appear verbatim.
std::string build_prompt(SynthesisJob& job, const templates::TemplateSet& templates);

// Total parser over labeled blocks (Question/Options/Answer/Explanation, or
// Question/Solution/Options/Answer for math). Never throws on any input.
std::pair<std::vector<ParsedExample>, ParseReport> parse_response(
    const std::string& text, int expected_n, SynthStyle style);

// Provenance + content-hash ids for one job's parsed examples.
std::vector<SynthExample> attach_provenance(const SynthesisJob& job,
                                            const std::vector<ParsedExample>& parsed);

// Runs every job through the generator, parsing and retrying jobs that
// yield zero examples (retries bypass the generation cache).
SynthesisOutcome synthesize_all(std::vector<SynthesisJob>& jobs,
                                scorer::Backend& backend,
                                const templates::TemplateSet& templates,
                                scorer::ScoreCache* cache = nullptr,
                                int max_retries = 1, size_t in_flight = 1);

// An optionless math question upgraded with generated options + knowledge.
struct PreprocessedQuery {
  corpus::Query query;  // gains options and a gold label
  std::vector<std::string> knowledge;
};

struct PreprocessOutcome {
  std::optional<PreprocessedQuery> result;
  std::string skip_reason;  // non-empty when the response was unparseable
};

// Asks the generator for background knowledge, an answer, and distractors,
// then assembles a labeled multiple-choice query. Unparseable responses skip
// the query with a reason instead of failing the batch.
PreprocessOutcome preprocess_math_query(const std::string& question,
                                        const std::vector<std::string>& tags,
                                        scorer::Backend& backend,
                                        const templates::TemplateSet& templates,
                                        scorer::ScoreCache* cache = nullptr);

// Stable ascending sort on (re, deficiency id, ordinal); every entry's
// provenance must resolve to a stored deficiency.
CurriculumManifest order_curriculum(
    const std::vector<SynthExample>& examples,
    const std::vector<diagnose::Deficiency>& deficiencies);

// Instruction-formatted input/output rendering for manifest records.
std::string manifest_input(const SynthExample& example);
std::string manifest_output(const SynthExample& example);

}  // namespace kdiag::remedy
