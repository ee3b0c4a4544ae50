// Copyright 2026 kdiag authors
// SPDX-License-Identifier: Apache-2.0

#include "kdiag/pipeline.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <set>
#include <unordered_set>

#include "kdiag/diagnose.hpp"
#include "kdiag/errors.hpp"
#include "kdiag/evalkit.hpp"
#include "kdiag/hashing.hpp"
#include "kdiag/jsonl.hpp"
#include "kdiag/parallel.hpp"
#include "kdiag/remedy.hpp"
#include "kdiag/remote.hpp"
#include "kdiag/text.hpp"
#include "kdiag/version.hpp"

namespace kdiag::pipeline {

namespace {

constexpr const char* kLedgerFile = "stages.jsonl";

// --- artifact (de)serialization ---------------------------------------------

nlohmann::json deficiency_to_json(const diagnose::Deficiency& d) {
  nlohmann::json obj = {{"query_id", d.query_id}, {"knowledge_id", d.knowledge_id},
                        {"re", d.re},             {"group", d.group},
                        {"budget", d.budget},     {"p", d.p},
                        {"q", d.q}};
  if (d.direction) obj["direction"] = *d.direction;
  return obj;
}

diagnose::Deficiency deficiency_from_json(const nlohmann::json& obj) {
  diagnose::Deficiency d;
  d.query_id = obj.at("query_id").get<std::string>();
  d.knowledge_id = obj.at("knowledge_id").get<std::string>();
  d.re = obj.at("re").get<double>();
  d.group = obj.at("group").get<std::string>();
  d.budget = obj.at("budget").get<int>();
  d.p = obj.value("p", std::vector<double>{});
  d.q = obj.value("q", std::vector<double>{});
  if (obj.contains("direction") && !obj["direction"].is_null()) {
    d.direction = obj["direction"].get<std::string>();
  }
  return d;
}

nlohmann::json pair_score_to_json(const diagnose::PairScore& s) {
  nlohmann::json obj = {{"query_id", s.query_id},
                        {"knowledge_id", s.knowledge_id},
                        {"re", s.re},
                        {"p", s.p},
                        {"q", s.q}};
  if (s.direction) obj["direction"] = *s.direction;
  return obj;
}

nlohmann::json job_to_json(const remedy::SynthesisJob& job) {
  return {{"query_id", job.query_id},
          {"knowledge_id", job.knowledge_id},
          {"re", job.re},
          {"group", job.group},
          {"n_examples", job.n_examples},
          {"style", remedy::style_name(job.style)},
          {"knowledge_text", job.knowledge_text},
          {"reference_example", job.reference_example},
          {"prompt", job.prompt}};
}

remedy::SynthesisJob job_from_json(const nlohmann::json& obj) {
  remedy::SynthesisJob job;
  job.query_id = obj.at("query_id").get<std::string>();
  job.knowledge_id = obj.at("knowledge_id").get<std::string>();
  job.re = obj.at("re").get<double>();
  job.group = obj.at("group").get<std::string>();
  job.n_examples = obj.at("n_examples").get<int>();
  job.style = obj.at("style").get<std::string>() == "math"
                  ? remedy::SynthStyle::Math
                  : remedy::SynthStyle::Reasoning;
  job.knowledge_text = obj.at("knowledge_text").get<std::string>();
  job.reference_example = obj.at("reference_example").get<std::string>();
  job.prompt = obj.value("prompt", std::string());
  return job;
}

nlohmann::json example_to_json(const remedy::SynthExample& e) {
  return {{"example_id", e.example_id},
          {"question", e.question},
          {"options", e.options},
          {"answer_index", e.answer_index},
          {"explanation", e.explanation},
          {"query_id", e.query_id},
          {"knowledge_id", e.knowledge_id},
          {"ordinal", e.ordinal},
          {"re", e.re},
          {"group", e.group}};
}

remedy::SynthExample example_from_json(const nlohmann::json& obj) {
  remedy::SynthExample e;
  e.example_id = obj.at("example_id").get<std::string>();
  e.question = obj.at("question").get<std::string>();
  e.options = obj.at("options").get<std::vector<std::string>>();
  e.answer_index = obj.at("answer_index").get<int>();
  e.explanation = obj.at("explanation").get<std::string>();
  e.query_id = obj.at("query_id").get<std::string>();
  e.knowledge_id = obj.at("knowledge_id").get<std::string>();
  e.ordinal = obj.at("ordinal").get<int>();
  e.re = obj.at("re").get<double>();
  e.group = obj.at("group").get<std::string>();
  return e;
}

nlohmann::json run_to_json(const evalkit::DetectionRun& run) {
  nlohmann::json params = nlohmann::json::object();
  if (run.tau) params["tau"] = *run.tau;
  if (run.seed) params["seed"] = *run.seed;
  if (run.sample_size) params["sample_size"] = *run.sample_size;
  return {{"method", evalkit::method_name(run.method)},
          {"label_free", evalkit::method_label_free(run.method)},
          {"flagged", run.flagged},
          {"params", params}};
}

std::string iso_timestamp() {
  auto now = std::chrono::system_clock::now();
  std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::tm tm_utc{};
  gmtime_r(&t, &tm_utc);
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
  return buf;
}

}  // namespace

const std::vector<std::string>& stage_names() {
  static const std::vector<std::string> names = {
      "ingest",     "embed",      "retrieve",    "diagnose", "plan",
      "synthesize", "curriculum", "eval-detect", "report"};
  return names;
}

bool is_stage_name(const std::string& name) {
  const auto& names = stage_names();
  return std::find(names.begin(), names.end(), name) != names.end();
}

Pipeline::Pipeline(config::PipelineConfig cfg) : cfg_(std::move(cfg)) {
  if (cfg_.out_dir.empty()) throw_config("paths.out_dir is not set");
  if (cfg_.cache_dir.empty()) cfg_.cache_dir = cfg_.out_dir / "cache";
  std::filesystem::create_directories(cfg_.out_dir);
  std::filesystem::create_directories(cfg_.cache_dir);

  // One pipeline process per output directory.
  auto lock_path = cfg_.out_dir / ".lock";
  lock_fd_ = ::open(lock_path.c_str(), O_CREAT | O_RDWR | O_CLOEXEC, 0644);
  if (lock_fd_ < 0) throw_io("cannot open lock file " + lock_path.string());
  if (::flock(lock_fd_, LOCK_EX | LOCK_NB) != 0) {
    ::close(lock_fd_);
    lock_fd_ = -1;
    throw_state("output directory is locked by another pipeline process: " +
                cfg_.out_dir.string());
  }
}

Pipeline::~Pipeline() {
  if (lock_fd_ >= 0) {
    ::flock(lock_fd_, LOCK_UN);
    ::close(lock_fd_);
  }
}

std::filesystem::path Pipeline::artifact_path(const std::string& name) const {
  return cfg_.out_dir / name;
}

std::string Pipeline::artifact_hash(const std::string& name) const {
  return hashing::sha256_hex_file(artifact_path(name));
}

void Pipeline::require_artifact(const std::string& name,
                                const std::string& stage) const {
  if (!std::filesystem::exists(artifact_path(name))) {
    throw_state("requires " + stage + " output (" + name + " is missing)");
  }
}

const std::string& Pipeline::config_fingerprint() {
  if (config_fp_) return *config_fp_;
  // Everything that can change artifact bytes; connection tuning (timeouts,
  // retries, in-flight) deliberately excluded.
  nlohmann::json doc;
  doc["version"] = kVersion;
  doc["min_confidence"] = cfg_.min_confidence;
  doc["m"] = cfg_.m;
  doc["tau"] = cfg_.tau;
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : cfg_.group_rows) {
    rows.push_back({{"lower", row.lower},
                    {"upper", std::isfinite(row.upper) ? nlohmann::json(row.upper)
                                                       : nlohmann::json()},
                    {"name", row.name},
                    {"budget", row.budget}});
  }
  doc["groups"] = rows;
  doc["delta"] = cfg_.delta;
  doc["clamp"] = cfg_.clamp;
  doc["diagnose_length_normalize"] = cfg_.diagnose_length_normalize;
  doc["template_id"] = cfg_.template_id;
  doc["query_text"] = cfg_.query_text;
  doc["style_map"] = cfg_.style_map;
  doc["expected_total"] =
      cfg_.expected_total ? nlohmann::json(*cfg_.expected_total) : nlohmann::json();
  doc["synth_retries"] = cfg_.synth_retries;
  doc["perplexity_length_normalize"] = cfg_.perplexity_length_normalize;
  doc["flag_unparseable"] = cfg_.flag_unparseable;
  doc["random_sample_size"] = cfg_.random_sample_size
                                  ? nlohmann::json(*cfg_.random_sample_size)
                                  : nlohmann::json();
  doc["random_seed"] = cfg_.random_seed;
  doc["embedder"] = {{"kind", cfg_.embedder.kind},
                     {"endpoint", cfg_.embedder.endpoint},
                     {"model", cfg_.embedder.model},
                     {"seed", cfg_.embedder_seed},
                     {"dim", cfg_.embedder.dim}};
  auto backend_doc = [](const config::BackendConfig& bc) {
    return nlohmann::json{
        {"kind", bc.kind},
        {"endpoint", bc.endpoint},
        {"model", bc.model},
        {"seed", bc.seed ? nlohmann::json(*bc.seed) : nlohmann::json()},
        {"script", hashing::content_id(bc.script.is_null() ? "null" : bc.script.dump())}};
  };
  doc["scorer"] = backend_doc(cfg_.scorer_backend);
  doc["generator"] = backend_doc(cfg_.generator_backend);

  // Prompt templates shape every rendered prompt.
  std::string templates_fp = "-";
  if (!cfg_.templates_dir.empty() && std::filesystem::exists(cfg_.templates_dir)) {
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(cfg_.templates_dir)) {
      if (entry.is_regular_file()) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    std::string acc;
    for (const auto& file : files) {
      acc += file.filename().string();
      acc += '\x1f';
      acc += hashing::sha256_hex_file(file);
      acc += '\x1e';
    }
    templates_fp = hashing::sha256_hex(acc);
  }
  doc["templates"] = templates_fp;

  config_fp_ = hashing::sha256_hex(doc.dump());
  return *config_fp_;
}

bool Pipeline::can_skip(const std::string& stage, const InputMap& inputs) const {
  if (!resume_) return false;
  auto ledger = cfg_.out_dir / kLedgerFile;
  if (!std::filesystem::exists(ledger)) return false;
  nlohmann::json latest;
  jsonl::for_each_record(ledger, [&](size_t, const nlohmann::json& rec) {
    if (rec.value("stage", std::string()) == stage) latest = rec;
  });
  if (latest.is_null() || !latest.contains("inputs")) return false;
  InputMap recorded;
  for (auto it = latest["inputs"].begin(); it != latest["inputs"].end(); ++it) {
    recorded[it.key()] = it.value().get<std::string>();
  }
  if (recorded != inputs) return false;
  for (const auto& output : latest.value("outputs", std::vector<std::string>{})) {
    if (!std::filesystem::exists(artifact_path(output))) return false;
  }
  return true;
}

void Pipeline::record_stage(const std::string& stage, const InputMap& inputs,
                            const std::vector<std::string>& outputs) {
  nlohmann::json rec = {{"stage", stage},
                        {"inputs", inputs},
                        {"outputs", outputs},
                        {"completed_at", iso_timestamp()},
                        {"version", kVersion}};
  std::ofstream out(cfg_.out_dir / kLedgerFile, std::ios::app);
  if (!out) throw_io("cannot append to stage ledger");
  out << rec.dump() << '\n';
}

std::unique_ptr<scorer::Backend> Pipeline::make_backend(
    const config::BackendConfig& bc, const char* role) const {
  if (bc.kind == "mock") {
    scorer::MockScript script;
    if (!bc.script.is_null() && bc.script.is_object()) {
      script = scorer::MockScript::from_json(bc.script);
    }
    return std::make_unique<scorer::MockBackend>(bc.seed, std::move(script));
  }
  if (bc.kind == "http") {
    remote::RemoteOptions options;
    options.endpoint = bc.endpoint;
    options.model = bc.model;
    options.auth_env = bc.auth_env;
    options.timeout_ms = bc.timeout_ms;
    options.max_retries = bc.retries;
    options.backoff_ms = bc.backoff_ms;
    return std::make_unique<remote::HttpScoringBackend>(std::move(options));
  }
  throw_config(std::string(role) + " backend kind \"" + bc.kind + "\" is unknown");
}

std::unique_ptr<retrieval::EmbeddingProvider> Pipeline::make_embedder() const {
  if (cfg_.embedder.kind == "stub") {
    return std::make_unique<retrieval::StubEmbeddingProvider>(cfg_.embedder_seed,
                                                              cfg_.embedder.dim);
  }
  remote::RemoteOptions options;
  options.endpoint = cfg_.embedder.endpoint;
  options.model = cfg_.embedder.model;
  options.auth_env = cfg_.embedder.auth_env;
  options.timeout_ms = cfg_.embedder.timeout_ms;
  options.max_retries = cfg_.embedder.retries;
  options.backoff_ms = cfg_.embedder.backoff_ms;
  return std::make_unique<remote::HttpEmbeddingProvider>(std::move(options));
}

const templates::TemplateSet& Pipeline::templates() {
  if (!templates_) {
    if (cfg_.templates_dir.empty()) throw_config("paths.templates is not set");
    templates_ = templates::TemplateSet::load_dir(cfg_.templates_dir);
  }
  return *templates_;
}

scorer::ScoreCache& Pipeline::score_cache() {
  if (!score_cache_) {
    score_cache_ = std::make_unique<scorer::ScoreCache>(cfg_.cache_dir / "scores.jsonl");
  }
  return *score_cache_;
}

retrieval::EmbeddingCache& Pipeline::embedding_cache() {
  if (!embedding_cache_) {
    embedding_cache_ = std::make_unique<retrieval::EmbeddingCache>(
        cfg_.cache_dir / "embeddings.jsonl");
  }
  return *embedding_cache_;
}

StageOutcome Pipeline::run_stage(const std::string& name) {
  struct StageSpec {
    std::vector<std::pair<std::string, std::string>> needs;  // artifact, stage
    std::vector<std::string> (Pipeline::*runner)();
  };
  static const std::map<std::string, StageSpec> specs = {
      {"ingest", {{}, &Pipeline::stage_ingest}},
      {"embed",
       {{{"facts.jsonl", "ingest"}, {"queries.jsonl", "ingest"}},
        &Pipeline::stage_embed}},
      {"retrieve",
       {{{"facts.jsonl", "ingest"},
         {"queries.jsonl", "ingest"},
         {"attached_knowledge.jsonl", "ingest"},
         {"embed_summary.json", "embed"}},
        &Pipeline::stage_retrieve}},
      {"diagnose",
       {{{"facts.jsonl", "ingest"},
         {"queries.jsonl", "ingest"},
         {"knowledge_sets.jsonl", "retrieve"}},
        &Pipeline::stage_diagnose}},
      {"plan",
       {{{"facts.jsonl", "ingest"},
         {"queries.jsonl", "ingest"},
         {"deficiencies.jsonl", "diagnose"}},
        &Pipeline::stage_plan}},
      {"synthesize",
       {{{"synthesis_jobs.jsonl", "plan"}}, &Pipeline::stage_synthesize}},
      {"curriculum",
       {{{"synth_examples.jsonl", "synthesize"}, {"deficiencies.jsonl", "diagnose"}},
        &Pipeline::stage_curriculum}},
      {"eval-detect",
       {{{"queries.jsonl", "ingest"}, {"deficiencies.jsonl", "diagnose"}},
        &Pipeline::stage_eval_detect}},
      {"report",
       {{{"ingest_report.json", "ingest"},
         {"diagnose_report.json", "diagnose"},
         {"plan_totals.json", "plan"},
         {"detection_metrics.json", "eval-detect"}},
        &Pipeline::stage_report}},
  };
  auto spec_it = specs.find(name);
  if (spec_it == specs.end()) throw_invalid("unknown stage: " + name);
  const StageSpec& spec = spec_it->second;

  InputMap inputs;
  inputs["config"] = config_fingerprint();
  for (const auto& [artifact, stage] : spec.needs) {
    require_artifact(artifact, stage);
    inputs[artifact] = artifact_hash(artifact);
  }
  if (name == "ingest") {
    auto add_file = [&](const char* label, const std::filesystem::path& path) {
      inputs[label] = path.empty() ? "-" : hashing::sha256_hex_file(path);
    };
    if (cfg_.facts_path.empty()) throw_config("paths.facts is not set");
    if (cfg_.queries_path.empty()) throw_config("paths.queries is not set");
    if (!std::filesystem::exists(cfg_.facts_path)) {
      throw_io("facts input not found: " + cfg_.facts_path.string());
    }
    if (!std::filesystem::exists(cfg_.queries_path)) {
      throw_io("queries input not found: " + cfg_.queries_path.string());
    }
    if (!cfg_.math_queries_path.empty() &&
        !std::filesystem::exists(cfg_.math_queries_path)) {
      throw_io("math queries input not found: " + cfg_.math_queries_path.string());
    }
    add_file("input:facts", cfg_.facts_path);
    add_file("input:queries", cfg_.queries_path);
    add_file("input:math_queries", cfg_.math_queries_path);
  }

  StageOutcome outcome;
  outcome.stage = name;
  if (can_skip(name, inputs)) {
    nlohmann::json latest;
    jsonl::for_each_record(cfg_.out_dir / kLedgerFile,
                           [&](size_t, const nlohmann::json& rec) {
                             if (rec.value("stage", std::string()) == name) latest = rec;
                           });
    outcome.outputs = latest.value("outputs", std::vector<std::string>{});
    return outcome;
  }

  outcome.outputs = (this->*spec.runner)();
  outcome.executed = true;
  record_stage(name, inputs, outcome.outputs);
  return outcome;
}

std::vector<StageOutcome> Pipeline::run_all() {
  std::vector<StageOutcome> outcomes;
  for (const auto& name : stage_names()) outcomes.push_back(run_stage(name));
  return outcomes;
}

// --- stages -----------------------------------------------------------------

std::vector<std::string> Pipeline::stage_ingest() {
  auto fact_ingest =
      corpus::ingest_facts_file(cfg_.facts_path, cfg_.min_confidence);
  auto query_ingest = corpus::ingest_queries_file(cfg_.queries_path);

  std::map<std::string, corpus::Fact> facts;  // id -> fact, canonical order
  for (auto& fact : fact_ingest.facts) facts.emplace(fact.fact_id, std::move(fact));
  std::map<std::string, corpus::Query> queries;
  for (auto& query : query_ingest.queries) {
    queries.emplace(query.query_id, std::move(query));
  }

  // Optionless math questions gain generated options + attached knowledge.
  size_t generated_facts = 0;
  std::map<std::string, std::vector<std::string>> attached;
  nlohmann::json math_report = {{"processed", 0},
                                {"added", 0},
                                {"skipped", nlohmann::json::array()}};
  if (!cfg_.math_queries_path.empty()) {
    auto generator = make_backend(cfg_.generator_backend, "generator");
    struct MathInput {
      std::string question;
      std::vector<std::string> tags;
    };
    std::vector<MathInput> math_inputs;
    auto parse_errors = jsonl::for_each_record(
        cfg_.math_queries_path, [&](size_t, const nlohmann::json& rec) {
          if (!rec.contains("question")) return;
          math_inputs.push_back({rec["question"].get<std::string>(),
                                 rec.value("tags", std::vector<std::string>{})});
        });
    for (const auto& err : parse_errors) {
      math_report["skipped"].push_back(
          {{"question", "line " + std::to_string(err.line)}, {"reason", err.reason}});
    }
    for (const auto& input : math_inputs) {
      math_report["processed"] = math_report["processed"].get<int>() + 1;
      auto outcome = remedy::preprocess_math_query(input.question, input.tags,
                                                   *generator, templates(),
                                                   &score_cache());
      if (!outcome.result) {
        math_report["skipped"].push_back(
            {{"question", input.question}, {"reason", outcome.skip_reason}});
        continue;
      }
      auto& preprocessed = *outcome.result;
      std::vector<std::string> knowledge_ids;
      for (const auto& knowledge_text : preprocessed.knowledge) {
        corpus::Fact fact;
        fact.text = knowledge_text;
        fact.confidence = 1.0;
        fact.source = "generated";
        fact.fact_id = corpus::fact_id_for(knowledge_text);
        knowledge_ids.push_back(fact.fact_id);
        if (facts.emplace(fact.fact_id, std::move(fact)).second) ++generated_facts;
      }
      std::sort(knowledge_ids.begin(), knowledge_ids.end());
      knowledge_ids.erase(std::unique(knowledge_ids.begin(), knowledge_ids.end()),
                          knowledge_ids.end());
      const std::string query_id = preprocessed.query.query_id;
      if (queries.emplace(query_id, std::move(preprocessed.query)).second) {
        attached[query_id] = std::move(knowledge_ids);
        math_report["added"] = math_report["added"].get<int>() + 1;
      } else {
        math_report["skipped"].push_back(
            {{"question", input.question}, {"reason", "duplicate query"}});
      }
    }
  }

  std::vector<nlohmann::json> fact_records;
  for (const auto& [id, fact] : facts) fact_records.push_back(corpus::to_json(fact));
  jsonl::write_records_atomic(artifact_path("facts.jsonl"), fact_records);

  std::vector<nlohmann::json> query_records;
  for (const auto& [id, query] : queries) {
    query_records.push_back(corpus::to_json(query));
  }
  jsonl::write_records_atomic(artifact_path("queries.jsonl"), query_records);

  std::vector<nlohmann::json> attached_records;
  for (const auto& [query_id, fact_ids] : attached) {
    attached_records.push_back({{"query_id", query_id}, {"fact_ids", fact_ids}});
  }
  jsonl::write_records_atomic(artifact_path("attached_knowledge.jsonl"),
                              attached_records);

  nlohmann::json report;
  report["facts"] = corpus::to_json(fact_ingest.stats);
  report["facts"]["generated"] = generated_facts;
  nlohmann::json fact_errors = nlohmann::json::array();
  for (const auto& err : fact_ingest.errors) {
    fact_errors.push_back({{"line", err.line}, {"reason", err.reason}});
  }
  report["fact_errors"] = fact_errors;
  nlohmann::json rejections = nlohmann::json::array();
  for (const auto& err : query_ingest.rejected) {
    rejections.push_back({{"line", err.line}, {"reason", err.reason}});
  }
  report["query_rejections"] = rejections;
  report["queries_accepted"] = queries.size();
  report["math"] = math_report;
  nlohmann::json warnings = nlohmann::json::array();
  if (facts.empty()) warnings.push_back("no facts kept after filtering");
  if (queries.empty()) warnings.push_back("no queries accepted");
  report["warnings"] = warnings;
  jsonl::write_atomic(artifact_path("ingest_report.json"), report.dump(2) + "\n");

  return {"facts.jsonl", "queries.jsonl", "attached_knowledge.jsonl",
          "ingest_report.json"};
}

std::vector<std::string> Pipeline::stage_embed() {
  auto facts = corpus::load_facts(artifact_path("facts.jsonl"));
  auto provider = make_embedder();

  size_t dim = 0;
  if (!facts.empty()) {
    std::vector<std::string> texts;
    texts.reserve(facts.size());
    for (const auto& fact : facts) texts.push_back(text::normalize(fact.text));
    // Chunked so remote providers see bounded batches, in parallel up to the
    // configured in-flight limit.
    const size_t chunk = 64;
    const size_t chunk_count = (texts.size() + chunk - 1) / chunk;
    std::vector<size_t> dims(chunk_count, 0);
    parallel_for(chunk_count, cfg_.embedder.in_flight, [&](size_t c) {
      size_t begin = c * chunk;
      size_t end = std::min(texts.size(), begin + chunk);
      std::vector<std::string> slice(texts.begin() + static_cast<std::ptrdiff_t>(begin),
                                     texts.begin() + static_cast<std::ptrdiff_t>(end));
      auto vectors = retrieval::embed(slice, *provider, &embedding_cache());
      dims[c] = vectors.empty() ? 0 : vectors[0].dim();
    });
    for (size_t d : dims) {
      if (dim == 0) dim = d;
      if (d != 0 && d != dim) {
        throw_invalid("embedding dimension mismatch across batches: " +
                      std::to_string(dim) + " vs " + std::to_string(d));
      }
    }
  }

  nlohmann::json summary = {{"provider", provider->id()},
                            {"dim", dim},
                            {"facts", facts.size()}};
  jsonl::write_atomic(artifact_path("embed_summary.json"), summary.dump(2) + "\n");
  return {"embed_summary.json"};
}

std::vector<std::string> Pipeline::stage_retrieve() {
  auto facts = corpus::load_facts(artifact_path("facts.jsonl"));
  auto queries = corpus::load_queries(artifact_path("queries.jsonl"));

  std::map<std::string, std::vector<std::string>> attached;
  jsonl::for_each_record(artifact_path("attached_knowledge.jsonl"),
                         [&](size_t, const nlohmann::json& rec) {
                           attached[rec.at("query_id").get<std::string>()] =
                               rec.at("fact_ids").get<std::vector<std::string>>();
                         });

  std::vector<corpus::Query> to_retrieve;
  for (const auto& query : queries) {
    if (!attached.count(query.query_id)) to_retrieve.push_back(query);
  }

  retrieval::KnowledgeSets sets;
  if (!to_retrieve.empty()) {
    auto provider = make_embedder();
    auto mode = cfg_.query_text == "question_options"
                    ? retrieval::QueryTextMode::QuestionAndOptions
                    : retrieval::QueryTextMode::QuestionOnly;
    sets = retrieval::build_knowledge_sets(to_retrieve, facts, *provider, cfg_.m,
                                           mode, &embedding_cache(),
                                           cfg_.embedder.in_flight);
  }

  std::vector<nlohmann::json> records;
  size_t retrieved = 0;
  for (const auto& query : queries) {  // queries.jsonl is already id-sorted
    auto attached_it = attached.find(query.query_id);
    if (attached_it != attached.end()) {
      records.push_back({{"query_id", query.query_id},
                         {"fact_ids", attached_it->second},
                         {"source", "attached"}});
      continue;
    }
    auto set_it = sets.sets.find(query.query_id);
    if (set_it == sets.sets.end()) continue;  // failed; reported below
    records.push_back({{"query_id", query.query_id},
                       {"fact_ids", set_it->second},
                       {"similarities", sets.similarities[query.query_id]},
                       {"source", "retrieved"}});
    ++retrieved;
  }
  jsonl::write_records_atomic(artifact_path("knowledge_sets.jsonl"), records);

  nlohmann::json report = {{"queries", queries.size()},
                           {"retrieved", retrieved},
                           {"attached", attached.size()},
                           {"m", cfg_.m},
                           {"failed", sets.failed_queries}};
  jsonl::write_atomic(artifact_path("retrieve_report.json"), report.dump(2) + "\n");
  return {"knowledge_sets.jsonl", "retrieve_report.json"};
}

std::vector<std::string> Pipeline::stage_diagnose() {
  auto facts = corpus::load_facts(artifact_path("facts.jsonl"));
  auto queries = corpus::load_queries(artifact_path("queries.jsonl"));
  std::map<std::string, std::vector<std::string>> sets;
  jsonl::for_each_record(artifact_path("knowledge_sets.jsonl"),
                         [&](size_t, const nlohmann::json& rec) {
                           sets[rec.at("query_id").get<std::string>()] =
                               rec.at("fact_ids").get<std::vector<std::string>>();
                         });

  auto backend = make_backend(cfg_.scorer_backend, "scorer");
  diagnose::DiagnoseOptions options;
  options.length_normalize = cfg_.diagnose_length_normalize;
  options.clamp = cfg_.clamp;
  options.delta = cfg_.delta;
  options.template_id = cfg_.template_id;
  options.in_flight = cfg_.scorer_backend.in_flight;
  auto table = cfg_.table();
  auto result = diagnose::diagnose_all(queries, sets, facts, *backend, templates(),
                                       table, options, &score_cache());

  std::vector<nlohmann::json> deficiency_records;
  for (const auto& d : result.deficiencies) {
    deficiency_records.push_back(deficiency_to_json(d));
  }
  jsonl::write_records_atomic(artifact_path("deficiencies.jsonl"),
                              deficiency_records);

  std::vector<nlohmann::json> score_records;
  for (const auto& pair : result.pair_scores) {
    score_records.push_back(pair_score_to_json(pair));
  }
  jsonl::write_records_atomic(artifact_path("re_scores.jsonl"), score_records);

  // Per-group counts in severity (table) order.
  nlohmann::json group_counts = nlohmann::json::array();
  for (const auto& row : table.rows()) {
    size_t count = 0;
    for (const auto& d : result.deficiencies) {
      if (d.group == row.name) ++count;
    }
    group_counts.push_back(
        {{"group", row.name}, {"budget", row.budget}, {"count", count}});
  }
  nlohmann::json failures = nlohmann::json::array();
  for (const auto& failure : result.failures) {
    failures.push_back({{"query_id", failure.query_id},
                        {"knowledge_id", failure.knowledge_id},
                        {"reason", failure.reason}});
  }
  nlohmann::json report = {{"pairs_scored", result.pair_scores.size()},
                           {"deficiencies", result.deficiencies.size()},
                           {"group_counts", group_counts},
                           {"prior_scorings", result.prior_scorings},
                           {"posterior_scorings", result.posterior_scorings},
                           {"failures", failures},
                           {"tau", cfg_.tau}};
  jsonl::write_atomic(artifact_path("diagnose_report.json"), report.dump(2) + "\n");
  return {"deficiencies.jsonl", "re_scores.jsonl", "diagnose_report.json"};
}

std::vector<std::string> Pipeline::stage_plan() {
  auto facts = corpus::load_facts(artifact_path("facts.jsonl"));
  auto queries = corpus::load_queries(artifact_path("queries.jsonl"));
  std::vector<diagnose::Deficiency> deficiencies;
  jsonl::for_each_record(artifact_path("deficiencies.jsonl"),
                         [&](size_t, const nlohmann::json& rec) {
                           deficiencies.push_back(deficiency_from_json(rec));
                         });

  auto plan = remedy::plan_budgets(deficiencies, queries, facts, cfg_.style_map,
                                   cfg_.expected_total);
  for (auto& job : plan.jobs) remedy::build_prompt(job, templates());

  std::vector<nlohmann::json> job_records;
  for (const auto& job : plan.jobs) job_records.push_back(job_to_json(job));
  jsonl::write_records_atomic(artifact_path("synthesis_jobs.jsonl"), job_records);

  nlohmann::json groups = nlohmann::json::array();
  for (size_t i = 0; i < plan.totals.group_deficiencies.size(); ++i) {
    groups.push_back({{"group", plan.totals.group_deficiencies[i].first},
                      {"deficiencies", plan.totals.group_deficiencies[i].second},
                      {"examples", plan.totals.group_examples[i].second}});
  }
  nlohmann::json totals = {{"groups", groups},
                           {"total_examples", plan.totals.total_examples},
                           {"warnings", plan.totals.warnings}};
  if (plan.totals.expected_total) {
    totals["expected_total"] = *plan.totals.expected_total;
  }
  jsonl::write_atomic(artifact_path("plan_totals.json"), totals.dump(2) + "\n");
  return {"synthesis_jobs.jsonl", "plan_totals.json"};
}

std::vector<std::string> Pipeline::stage_synthesize() {
  std::vector<remedy::SynthesisJob> jobs;
  jsonl::for_each_record(artifact_path("synthesis_jobs.jsonl"),
                         [&](size_t, const nlohmann::json& rec) {
                           jobs.push_back(job_from_json(rec));
                         });
  auto generator = make_backend(cfg_.generator_backend, "generator");
  auto outcome = remedy::synthesize_all(jobs, *generator, templates(), &score_cache(),
                                        cfg_.synth_retries,
                                        cfg_.generator_backend.in_flight);

  std::vector<nlohmann::json> example_records;
  for (const auto& example : outcome.examples) {
    example_records.push_back(example_to_json(example));
  }
  jsonl::write_records_atomic(artifact_path("synth_examples.jsonl"), example_records);

  std::vector<nlohmann::json> report_records;
  for (const auto& report : outcome.reports) {
    nlohmann::json issues = nlohmann::json::array();
    for (const auto& issue : report.issues) {
      issues.push_back({{"block", issue.block}, {"reason", issue.reason}});
    }
    report_records.push_back({{"query_id", report.query_id},
                              {"knowledge_id", report.knowledge_id},
                              {"attempts", report.attempts},
                              {"found", report.found},
                              {"malformed", report.malformed},
                              {"failed", report.failed},
                              {"issues", issues}});
  }
  jsonl::write_records_atomic(artifact_path("synth_reports.jsonl"), report_records);
  return {"synth_examples.jsonl", "synth_reports.jsonl"};
}

std::vector<std::string> Pipeline::stage_curriculum() {
  std::vector<remedy::SynthExample> examples;
  jsonl::for_each_record(artifact_path("synth_examples.jsonl"),
                         [&](size_t, const nlohmann::json& rec) {
                           examples.push_back(example_from_json(rec));
                         });
  std::vector<diagnose::Deficiency> deficiencies;
  jsonl::for_each_record(artifact_path("deficiencies.jsonl"),
                         [&](size_t, const nlohmann::json& rec) {
                           deficiencies.push_back(deficiency_from_json(rec));
                         });
  auto manifest = remedy::order_curriculum(examples, deficiencies);

  std::vector<nlohmann::json> records;
  for (const auto& entry : manifest.entries) {
    records.push_back({{"format_version", manifest.format_version},
                       {"example_id", entry.example_id},
                       {"input", remedy::manifest_input(entry)},
                       {"output", remedy::manifest_output(entry)},
                       {"re", entry.re},
                       {"group", entry.group},
                       {"deficiency_ref",
                        {{"query_id", entry.query_id},
                         {"knowledge_id", entry.knowledge_id}}},
                       {"ordinal", entry.ordinal}});
  }
  jsonl::write_records_atomic(artifact_path("manifest.jsonl"), records);
  return {"manifest.jsonl"};
}

std::vector<std::string> Pipeline::stage_eval_detect() {
  auto queries = corpus::load_queries(artifact_path("queries.jsonl"));
  std::vector<diagnose::Deficiency> deficiencies;
  jsonl::for_each_record(artifact_path("deficiencies.jsonl"),
                         [&](size_t, const nlohmann::json& rec) {
                           deficiencies.push_back(deficiency_from_json(rec));
                         });

  std::vector<corpus::Query> labeled;
  for (const auto& query : queries) {
    if (query.gold_label) labeled.push_back(query);
  }

  std::vector<nlohmann::json> run_records;
  std::vector<nlohmann::json> golden_records;
  std::vector<nlohmann::json> perplexity_records;
  nlohmann::json metrics_doc;
  nlohmann::json warnings = nlohmann::json::array();

  if (labeled.empty()) {
    warnings.push_back("no labeled queries; detection harness skipped");
    metrics_doc = {{"rows", nlohmann::json::array()}, {"warnings", warnings}};
  } else {
    auto backend = make_backend(cfg_.scorer_backend, "scorer");
    evalkit::EvalOptions options;
    options.template_id = cfg_.template_id;
    options.in_flight = cfg_.scorer_backend.in_flight;
    options.length_normalize = cfg_.perplexity_length_normalize;
    options.flag_unparseable = cfg_.flag_unparseable;

    auto golden =
        evalkit::golden_label_detect(labeled, *backend, templates(), options,
                                     &score_cache());
    auto perplexity =
        evalkit::perplexity_detect(labeled, *backend, templates(), options,
                                   &score_cache());
    std::set<std::string> truth(golden.run.flagged.begin(), golden.run.flagged.end());

    std::vector<std::string> labeled_ids;
    for (const auto& query : labeled) labeled_ids.push_back(query.query_id);
    size_t sample_size = cfg_.random_sample_size.value_or(truth.size());
    auto random = evalkit::random_detect(labeled_ids, sample_size, cfg_.random_seed);

    std::unordered_set<std::string> labeled_set(labeled_ids.begin(),
                                                labeled_ids.end());
    std::vector<diagnose::Deficiency> labeled_deficiencies;
    for (const auto& d : deficiencies) {
      if (labeled_set.count(d.query_id)) labeled_deficiencies.push_back(d);
    }
    auto re_run = evalkit::re_detect(labeled_deficiencies, cfg_.tau);

    const evalkit::DetectionRun* runs[] = {&golden.run, &perplexity.run, &random,
                                           &re_run};
    nlohmann::json rows = nlohmann::json::array();
    for (const auto* run : runs) {
      run_records.push_back(run_to_json(*run));
      auto metrics = evalkit::score_detection(*run, truth);
      nlohmann::json params = run_records.back()["params"];
      rows.push_back({{"method", evalkit::method_name(run->method)},
                      {"label_free", evalkit::method_label_free(run->method)},
                      {"precision", metrics.precision},
                      {"recall", metrics.recall},
                      {"f1", metrics.f1},
                      {"tp", metrics.tp},
                      {"fp", metrics.fp},
                      {"fn", metrics.fn},
                      {"params", params}});
      if (metrics.empty_warning) {
        warnings.push_back(evalkit::method_name(run->method) +
                           ": empty truth and empty flagged set");
      }
    }
    if (perplexity.ties > 0) {
      warnings.push_back("perplexity ties broken by option index: " +
                         std::to_string(perplexity.ties));
    }
    metrics_doc = {{"rows", rows},
                   {"truth_size", truth.size()},
                   {"evaluated", labeled.size()},
                   {"warnings", warnings}};

    for (const auto& record : golden.records) {
      nlohmann::json obj = {{"query_id", record.query_id},
                            {"gold", record.gold},
                            {"wrong", record.wrong}};
      obj["predicted"] = record.predicted ? nlohmann::json(*record.predicted)
                                          : nlohmann::json();
      golden_records.push_back(std::move(obj));
    }
    for (const auto& record : perplexity.records) {
      perplexity_records.push_back({{"query_id", record.query_id},
                                    {"gold", record.gold},
                                    {"predicted", record.predicted},
                                    {"tie", record.tie},
                                    {"nll", record.nll},
                                    {"token_counts", record.token_counts}});
    }
  }

  jsonl::write_records_atomic(artifact_path("detection_runs.jsonl"), run_records);
  jsonl::write_records_atomic(artifact_path("golden_records.jsonl"), golden_records);
  jsonl::write_records_atomic(artifact_path("perplexity_scores.jsonl"),
                              perplexity_records);
  jsonl::write_atomic(artifact_path("detection_metrics.json"),
                      metrics_doc.dump(2) + "\n");
  return {"detection_runs.jsonl", "golden_records.jsonl", "perplexity_scores.jsonl",
          "detection_metrics.json"};
}

std::vector<std::string> Pipeline::stage_report() {
  auto ingest_report =
      nlohmann::json::parse(jsonl::read_file(artifact_path("ingest_report.json")));
  auto diagnose_report =
      nlohmann::json::parse(jsonl::read_file(artifact_path("diagnose_report.json")));
  auto plan_totals =
      nlohmann::json::parse(jsonl::read_file(artifact_path("plan_totals.json")));
  auto detection =
      nlohmann::json::parse(jsonl::read_file(artifact_path("detection_metrics.json")));

  std::string text;
  text += "Knowledge deficiency pipeline report\n";
  text += "====================================\n\n";

  text += "Corpus\n------\n";
  const auto& fact_stats = ingest_report["facts"];
  text += "facts: read " + fact_stats["total_read"].dump() + ", kept " +
          fact_stats["kept"].dump() + " (dropped " +
          fact_stats["dropped_low_confidence"].dump() + " low-confidence, " +
          fact_stats["dropped_duplicate"].dump() + " duplicate)";
  if (fact_stats.value("generated", 0) > 0) {
    text += ", generated " + fact_stats["generated"].dump();
  }
  text += "\n";
  text += "queries: accepted " + ingest_report["queries_accepted"].dump() +
          ", rejected " +
          std::to_string(ingest_report["query_rejections"].size()) + "\n\n";

  text += "Diagnosis\n---------\n";
  text += "pairs scored " + diagnose_report["pairs_scored"].dump() +
          ", deficiencies " + diagnose_report["deficiencies"].dump() + " (tau " +
          diagnose_report["tau"].dump() + ")\n";
  for (const auto& row : diagnose_report["group_counts"]) {
    text += "  " + row["group"].get<std::string>() + " (budget " +
            row["budget"].dump() + "): " + row["count"].dump() + "\n";
  }
  text += "\n";

  text += "Synthesis plan\n--------------\n";
  for (const auto& row : plan_totals["groups"]) {
    text += "  " + row["group"].get<std::string>() + ": " +
            row["deficiencies"].dump() + " deficiencies -> " +
            row["examples"].dump() + " examples\n";
  }
  text += "total planned examples: " + plan_totals["total_examples"].dump() + "\n";
  if (plan_totals.contains("expected_total")) {
    text += "configured expected total: " + plan_totals["expected_total"].dump() + "\n";
  }
  for (const auto& warning : plan_totals["warnings"]) {
    text += "warning: " + warning.get<std::string>() + "\n";
  }
  text += "\n";

  text += "Detection methods\n-----------------\n";
  std::vector<evalkit::ReportRow> rows;
  for (const auto& row : detection["rows"]) {
    evalkit::ReportRow out_row;
    const std::string method = row["method"].get<std::string>();
    if (method == "Golden Label") out_row.method = evalkit::Method::GoldenLabel;
    else if (method == "Perplexity") out_row.method = evalkit::Method::Perplexity;
    else if (method == "Random") out_row.method = evalkit::Method::Random;
    else out_row.method = evalkit::Method::RelativeEntropy;
    out_row.label_free = row["label_free"].get<bool>();
    out_row.metrics.precision = row["precision"].get<double>();
    out_row.metrics.recall = row["recall"].get<double>();
    out_row.metrics.f1 = row["f1"].get<double>();
    out_row.metrics.tp = row["tp"].get<long long>();
    out_row.metrics.fp = row["fp"].get<long long>();
    out_row.metrics.fn = row["fn"].get<long long>();
    const auto& params = row["params"];
    std::string summary;
    for (auto it = params.begin(); it != params.end(); ++it) {
      if (!summary.empty()) summary += ", ";
      summary += it.key() + "=" + it.value().dump();
    }
    out_row.params = summary.empty() ? "-" : summary;
    rows.push_back(std::move(out_row));
  }
  if (rows.empty()) {
    text += "(no labeled queries; harness skipped)\n";
  } else {
    text += evalkit::render_report(rows);
  }
  for (const auto& warning : detection["warnings"]) {
    text += "note: " + warning.get<std::string>() + "\n";
  }

  jsonl::write_atomic(artifact_path("report.txt"), text);
  nlohmann::json combined = {{"corpus", ingest_report},
                             {"diagnosis", diagnose_report},
                             {"plan", plan_totals},
                             {"detection", detection}};
  jsonl::write_atomic(artifact_path("report.json"), combined.dump(2) + "\n");
  return {"report.txt", "report.json"};
}

}  // namespace kdiag::pipeline
