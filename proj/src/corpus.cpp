// Copyright 2026 kdiag authors
// SPDX-License-Identifier: Apache-2.0

#include "kdiag/corpus.hpp"

#include <algorithm>
#include <set>
#include <unordered_set>

#include "kdiag/hashing.hpp"
#include "kdiag/text.hpp"

namespace kdiag::corpus {

namespace {

using nlohmann::json;

std::optional<std::string> get_string(const json& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end() || !it->is_string()) return std::nullopt;
  return it->get<std::string>();
}

}  // namespace

std::string fact_id_for(std::string_view fact_text) {
  return hashing::content_id(text::normalize(fact_text));
}

std::string query_id_for(const std::string& question,
                         const std::vector<std::string>& options,
                         const std::optional<int>& gold_label) {
  std::string key = text::normalize(question);
  for (const auto& opt : options) {
    key += '\x1f';
    key += text::normalize(opt);
  }
  key += '\x1f';
  key += gold_label ? std::to_string(*gold_label) : std::string("-");
  return hashing::content_id(key);
}

FactIngest ingest_facts_text(const std::string& body, double min_confidence) {
  FactIngest out;
  std::unordered_set<std::string> seen;
  auto parse_errors = jsonl::for_each_record_text(body, [&](size_t line, const json& rec) {
    auto txt = get_string(rec, "text");
    if (!txt || text::trim(*txt).empty()) {
      out.errors.push_back({line, "missing or empty text"});
      return;
    }
    auto conf_it = rec.find("confidence");
    if (conf_it == rec.end() || !conf_it->is_number()) {
      out.errors.push_back({line, "missing or non-numeric confidence"});
      return;
    }
    double confidence = conf_it->get<double>();
    if (confidence < 0.0 || confidence > 1.0) {
      out.errors.push_back({line, "confidence outside [0,1]"});
      return;
    }
    out.stats.total_read++;
    if (confidence < min_confidence) {
      out.stats.dropped_low_confidence++;
      return;
    }
    std::string normalized = text::normalize(*txt);
    if (!seen.insert(normalized).second) {
      out.stats.dropped_duplicate++;
      return;
    }
    Fact fact;
    fact.fact_id = hashing::content_id(normalized);
    fact.text = text::trim(*txt);
    fact.confidence = confidence;
    fact.source = get_string(rec, "source").value_or("");
    out.facts.push_back(std::move(fact));
    out.stats.kept++;
  });
  for (auto& err : parse_errors) out.errors.push_back(std::move(err));
  std::sort(out.errors.begin(), out.errors.end(),
            [](const auto& a, const auto& b) { return a.line < b.line; });
  return out;
}

FactIngest ingest_facts_file(const std::filesystem::path& path, double min_confidence) {
  return ingest_facts_text(jsonl::read_file(path), min_confidence);
}

QueryIngest ingest_queries_text(const std::string& body) {
  QueryIngest out;
  std::unordered_set<std::string> seen_ids;
  auto parse_errors = jsonl::for_each_record_text(body, [&](size_t line, const json& rec) {
    auto question = get_string(rec, "question");
    if (!question || text::trim(*question).empty()) {
      out.rejected.push_back({line, "missing or empty question"});
      return;
    }
    auto opts_it = rec.find("options");
    std::vector<std::string> options;
    if (opts_it != rec.end() && opts_it->is_array()) {
      for (const auto& o : *opts_it) {
        if (!o.is_string()) {
          options.clear();
          break;
        }
        options.push_back(o.get<std::string>());
      }
    }
    if (options.size() < 2) {
      out.rejected.push_back({line, "needs options"});
      return;
    }
    std::set<std::string> distinct;
    for (const auto& opt : options) distinct.insert(text::normalize(opt));
    if (distinct.size() != options.size()) {
      out.rejected.push_back({line, "duplicate option texts"});
      return;
    }
    std::optional<int> gold;
    auto label_it = rec.find("label");
    if (label_it != rec.end() && !label_it->is_null()) {
      if (!label_it->is_number_integer()) {
        out.rejected.push_back({line, "label is not an integer"});
        return;
      }
      int label = label_it->get<int>();
      if (label < 0 || label >= static_cast<int>(options.size())) {
        out.rejected.push_back({line, "label out of range"});
        return;
      }
      gold = label;
    }
    Query query;
    query.question = text::trim(*question);
    query.options = std::move(options);
    query.gold_label = gold;
    auto tags_it = rec.find("tags");
    if (tags_it != rec.end() && tags_it->is_array()) {
      for (const auto& t : *tags_it) {
        if (t.is_string()) query.tags.push_back(t.get<std::string>());
      }
    }
    query.query_id = query_id_for(query.question, query.options, query.gold_label);
    if (!seen_ids.insert(query.query_id).second) {
      out.rejected.push_back({line, "duplicate query"});
      return;
    }
    out.queries.push_back(std::move(query));
  });
  for (auto& err : parse_errors) out.rejected.push_back(std::move(err));
  std::sort(out.rejected.begin(), out.rejected.end(),
            [](const auto& a, const auto& b) { return a.line < b.line; });
  return out;
}

QueryIngest ingest_queries_file(const std::filesystem::path& path) {
  return ingest_queries_text(jsonl::read_file(path));
}

nlohmann::json to_json(const Fact& fact) {
  return {{"fact_id", fact.fact_id},
          {"text", fact.text},
          {"confidence", fact.confidence},
          {"source", fact.source}};
}

nlohmann::json to_json(const Query& query) {
  nlohmann::json obj = {{"query_id", query.query_id},
                        {"question", query.question},
                        {"options", query.options},
                        {"tags", query.tags}};
  if (query.gold_label) obj["label"] = *query.gold_label;
  return obj;
}

nlohmann::json to_json(const CorpusStats& stats) {
  return {{"total_read", stats.total_read},
          {"kept", stats.kept},
          {"dropped_low_confidence", stats.dropped_low_confidence},
          {"dropped_duplicate", stats.dropped_duplicate}};
}

Fact fact_from_json(const nlohmann::json& obj) {
  Fact fact;
  fact.fact_id = obj.at("fact_id").get<std::string>();
  fact.text = obj.at("text").get<std::string>();
  fact.confidence = obj.value("confidence", 1.0);
  fact.source = obj.value("source", std::string());
  return fact;
}

Query query_from_json(const nlohmann::json& obj) {
  Query query;
  query.query_id = obj.at("query_id").get<std::string>();
  query.question = obj.at("question").get<std::string>();
  query.options = obj.at("options").get<std::vector<std::string>>();
  if (obj.contains("label") && !obj["label"].is_null()) {
    query.gold_label = obj["label"].get<int>();
  }
  if (obj.contains("tags")) query.tags = obj["tags"].get<std::vector<std::string>>();
  return query;
}

std::vector<Fact> load_facts(const std::filesystem::path& path) {
  std::vector<Fact> facts;
  for (const auto& rec : jsonl::read_all(path)) facts.push_back(fact_from_json(rec));
  return facts;
}

std::vector<Query> load_queries(const std::filesystem::path& path) {
  std::vector<Query> queries;
  for (const auto& rec : jsonl::read_all(path)) queries.push_back(query_from_json(rec));
  return queries;
}

}  // namespace kdiag::corpus
