// Copyright 2026 kdiag authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "kdiag/jsonl.hpp"

namespace kdiag::corpus {

// One knowledge-base statement. fact_id is derived from the normalized text,
// so identical statements hash to the same id across runs.
struct Fact {
  std::string fact_id;
  std::string text;
  double confidence = 1.0;
  std::string source;
};

struct Query {
  std::string query_id;
  std::string question;
  std::vector<std::string> options;
  std::optional<int> gold_label;
  std::vector<std::string> tags;
};

// Invariant: total_read == kept + dropped_low_confidence + dropped_duplicate.
// Malformed lines never reach total_read; they are reported separately.
struct CorpusStats {
  size_t total_read = 0;
  size_t kept = 0;
  size_t dropped_low_confidence = 0;
  size_t dropped_duplicate = 0;
};

struct FactIngest {
  std::vector<Fact> facts;
  CorpusStats stats;
  std::vector<jsonl::RecordError> errors;
};

struct QueryIngest {
  std::vector<Query> queries;
  std::vector<jsonl::RecordError> rejected;
};

std::string fact_id_for(std::string_view fact_text);
std::string query_id_for(const std::string& question,
                         const std::vector<std::string>& options,
                         const std::optional<int>& gold_label);

// Filters on confidence >= min_confidence and dedups on normalized text,
// first occurrence winning.
FactIngest ingest_facts_text(const std::string& body, double min_confidence);
FactIngest ingest_facts_file(const std::filesystem::path& path, double min_confidence);

// Records need a question and at least two distinct options. Exact duplicate
// records (same query_id) keep the first occurrence.
QueryIngest ingest_queries_text(const std::string& body);
QueryIngest ingest_queries_file(const std::filesystem::path& path);

nlohmann::json to_json(const Fact& fact);
nlohmann::json to_json(const Query& query);
nlohmann::json to_json(const CorpusStats& stats);
Fact fact_from_json(const nlohmann::json& obj);
Query query_from_json(const nlohmann::json& obj);

std::vector<Fact> load_facts(const std::filesystem::path& path);
std::vector<Query> load_queries(const std::filesystem::path& path);

}  // namespace kdiag::corpus
