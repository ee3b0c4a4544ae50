// Copyright 2026 kdiag authors
// SPDX-License-Identifier: Apache-2.0

#include "kdiag/config.hpp"

#include <cmath>

#include "kdiag/errors.hpp"
#include "kdiag/jsonl.hpp"
#include "kdiag/text.hpp"

namespace kdiag::config {

namespace {

// Field-by-field reader that records every violation and every explicit
// (non-default) setting instead of throwing at the first problem.
struct Reader {
  const nlohmann::json& doc;
  std::filesystem::path base_dir;
  std::vector<std::string>& errors;
  std::vector<std::string>& overrides;

  const nlohmann::json* section(const nlohmann::json& parent, const char* key) {
    auto it = parent.find(key);
    if (it == parent.end()) return nullptr;
    if (!it->is_object()) {
      errors.push_back(std::string(key) + " must be an object");
      return nullptr;
    }
    return &*it;
  }

  template <typename T>
  void read(const nlohmann::json* sec, const char* sec_name, const char* key, T& out,
            const char* expect) {
    if (!sec) return;
    auto it = sec->find(key);
    if (it == sec->end() || it->is_null()) return;
    try {
      out = it->get<T>();
      overrides.push_back(std::string(sec_name) + "." + key + " = " + it->dump());
    } catch (const nlohmann::json::exception&) {
      errors.push_back(std::string(sec_name) + "." + key + " must be " + expect);
    }
  }

  void read_path(const nlohmann::json* sec, const char* sec_name, const char* key,
                 std::filesystem::path& out) {
    std::string value;
    read(sec, sec_name, key, value, "a string");
    if (value.empty()) return;
    std::filesystem::path p(value);
    out = p.is_absolute() ? p : base_dir / p;
  }
};

void read_backend(Reader& reader, const nlohmann::json* sec, const char* name,
                  BackendConfig& out) {
  if (!sec) return;
  reader.read(sec, name, "kind", out.kind, "a string");
  reader.read(sec, name, "endpoint", out.endpoint, "a string");
  reader.read(sec, name, "model", out.model, "a string");
  reader.read(sec, name, "auth_env", out.auth_env, "a string");
  reader.read(sec, name, "timeout_ms", out.timeout_ms, "an integer");
  reader.read(sec, name, "retries", out.retries, "an integer");
  reader.read(sec, name, "backoff_ms", out.backoff_ms, "an integer");
  reader.read(sec, name, "in_flight", out.in_flight, "a positive integer");
  std::uint64_t seed = 0;
  if (sec->contains("seed") && !(*sec)["seed"].is_null()) {
    reader.read(sec, name, "seed", seed, "an unsigned integer");
    out.seed = seed;
  }
  if (sec->contains("script")) {
    const auto& script = (*sec)["script"];
    if (script.is_object()) {
      out.script = script;
      reader.overrides.push_back(std::string(name) + ".script = <inline>");
    } else if (script.is_string()) {
      auto path = reader.base_dir / script.get<std::string>();
      try {
        out.script = nlohmann::json::parse(jsonl::read_file(path));
        reader.overrides.push_back(std::string(name) + ".script = " + path.string());
      } catch (const std::exception& e) {
        reader.errors.push_back(std::string(name) + ".script unreadable: " + e.what());
      }
    } else if (!script.is_null()) {
      reader.errors.push_back(std::string(name) +
                              ".script must be an object or a file path");
    }
  }
  if (out.kind != "mock" && out.kind != "http") {
    reader.errors.push_back(std::string(name) + ".kind must be \"mock\" or \"http\"");
  }
  if (out.kind == "http" && out.endpoint.empty()) {
    reader.errors.push_back(std::string(name) + ".endpoint required for http backend");
  }
  if (out.in_flight < 1) {
    reader.errors.push_back(std::string(name) + ".in_flight must be at least 1");
  }
}

void read_group_rows(Reader& reader, const nlohmann::json& arr,
                     std::vector<diagnose::GroupRow>& rows) {
  if (!arr.is_array()) {
    reader.errors.push_back("diagnose.groups must be an array");
    return;
  }
  std::vector<diagnose::GroupRow> parsed;
  for (size_t i = 0; i < arr.size(); ++i) {
    const auto& rec = arr[i];
    if (!rec.is_object()) {
      reader.errors.push_back("diagnose.groups[" + std::to_string(i) +
                              "] must be an object");
      return;
    }
    diagnose::GroupRow row;
    try {
      row.lower = rec.at("lower").get<double>();
      row.upper = rec.contains("upper") && !rec["upper"].is_null()
                      ? rec["upper"].get<double>()
                      : std::numeric_limits<double>::infinity();
      row.name = rec.at("name").get<std::string>();
      row.budget = rec.at("budget").get<int>();
    } catch (const nlohmann::json::exception& e) {
      reader.errors.push_back("diagnose.groups[" + std::to_string(i) +
                              "] is malformed: " + e.what());
      return;
    }
    parsed.push_back(std::move(row));
  }
  rows = std::move(parsed);
  reader.overrides.push_back("diagnose.groups = <" + std::to_string(rows.size()) +
                             " rows>");
}

}  // namespace

ConfigLoad validate_config_json(const nlohmann::json& doc,
                                const std::filesystem::path& base_dir) {
  ConfigLoad load;
  if (!doc.is_object()) {
    load.errors.push_back("config root must be an object");
    return load;
  }
  PipelineConfig cfg;
  cfg.group_rows = diagnose::GroupTable::defaults().rows();
  Reader reader{doc, base_dir, load.errors, load.overrides};

  const auto* paths = reader.section(doc, "paths");
  reader.read_path(paths, "paths", "facts", cfg.facts_path);
  reader.read_path(paths, "paths", "queries", cfg.queries_path);
  reader.read_path(paths, "paths", "math_queries", cfg.math_queries_path);
  reader.read_path(paths, "paths", "templates", cfg.templates_dir);
  reader.read_path(paths, "paths", "cache_dir", cfg.cache_dir);
  reader.read_path(paths, "paths", "out_dir", cfg.out_dir);

  const auto* ingest = reader.section(doc, "ingest");
  reader.read(ingest, "ingest", "min_confidence", cfg.min_confidence, "a number");

  const auto* retrieval = reader.section(doc, "retrieval");
  reader.read(retrieval, "retrieval", "m", cfg.m, "a positive integer");
  reader.read(retrieval, "retrieval", "query_text", cfg.query_text, "a string");
  if (retrieval) {
    const auto* embedder = reader.section(*retrieval, "embedder");
    if (embedder) {
      reader.read(embedder, "retrieval.embedder", "kind", cfg.embedder.kind,
                  "a string");
      reader.read(embedder, "retrieval.embedder", "endpoint", cfg.embedder.endpoint,
                  "a string");
      reader.read(embedder, "retrieval.embedder", "model", cfg.embedder.model,
                  "a string");
      reader.read(embedder, "retrieval.embedder", "auth_env", cfg.embedder.auth_env,
                  "a string");
      reader.read(embedder, "retrieval.embedder", "timeout_ms",
                  cfg.embedder.timeout_ms, "an integer");
      reader.read(embedder, "retrieval.embedder", "retries", cfg.embedder.retries,
                  "an integer");
      reader.read(embedder, "retrieval.embedder", "backoff_ms",
                  cfg.embedder.backoff_ms, "an integer");
      reader.read(embedder, "retrieval.embedder", "in_flight", cfg.embedder.in_flight,
                  "a positive integer");
      reader.read(embedder, "retrieval.embedder", "dim", cfg.embedder.dim,
                  "a positive integer");
      std::uint64_t seed = 0;
      if (embedder->contains("seed") && !(*embedder)["seed"].is_null()) {
        reader.read(embedder, "retrieval.embedder", "seed", seed,
                    "an unsigned integer");
        cfg.embedder.seed = seed;
      }
      if (cfg.embedder.kind != "stub" && cfg.embedder.kind != "http") {
        load.errors.push_back(
            "retrieval.embedder.kind must be \"stub\" or \"http\"");
      }
      if (cfg.embedder.kind == "http" && cfg.embedder.endpoint.empty()) {
        load.errors.push_back(
            "retrieval.embedder.endpoint required for http embedder");
      }
      if (cfg.embedder.dim < 1) {
        load.errors.push_back("retrieval.embedder.dim must be at least 1");
      }
    }
  }

  const auto* diag = reader.section(doc, "diagnose");
  reader.read(diag, "diagnose", "tau", cfg.tau, "a number");
  reader.read(diag, "diagnose", "delta", cfg.delta, "a number");
  reader.read(diag, "diagnose", "clamp", cfg.clamp, "a number");
  reader.read(diag, "diagnose", "length_normalize", cfg.diagnose_length_normalize,
              "a boolean");
  reader.read(diag, "diagnose", "template", cfg.template_id, "a string");
  if (diag && diag->contains("groups")) {
    read_group_rows(reader, (*diag)["groups"], cfg.group_rows);
  } else if (diag && diag->contains("tau") && cfg.tau != 0.1) {
    // tau moved without a custom table: shift the default table's first bound.
    if (!cfg.group_rows.empty() && cfg.tau < cfg.group_rows.front().upper) {
      cfg.group_rows.front().lower = cfg.tau;
    }
  }

  read_backend(reader, reader.section(doc, "scorer"), "scorer", cfg.scorer_backend);
  read_backend(reader, reader.section(doc, "generator"), "generator",
               cfg.generator_backend);

  const auto* remedy = reader.section(doc, "remedy");
  if (remedy && remedy->contains("style_map")) {
    const auto& style_map = (*remedy)["style_map"];
    if (!style_map.is_object()) {
      load.errors.push_back("remedy.style_map must be an object");
    } else {
      cfg.style_map.clear();
      for (auto it = style_map.begin(); it != style_map.end(); ++it) {
        if (!it.value().is_string()) {
          load.errors.push_back("remedy.style_map." + it.key() + " must be a string");
          continue;
        }
        cfg.style_map[it.key()] = it.value().get<std::string>();
      }
      load.overrides.push_back("remedy.style_map = <" +
                               std::to_string(cfg.style_map.size()) + " entries>");
    }
  }
  if (remedy && remedy->contains("expected_total") &&
      !(*remedy)["expected_total"].is_null()) {
    long long expected = 0;
    reader.read(remedy, "remedy", "expected_total", expected, "an integer");
    cfg.expected_total = expected;
  }
  reader.read(remedy, "remedy", "retries", cfg.synth_retries, "an integer");

  const auto* eval = reader.section(doc, "eval");
  reader.read(eval, "eval", "length_normalize", cfg.perplexity_length_normalize,
              "a boolean");
  reader.read(eval, "eval", "flag_unparseable", cfg.flag_unparseable, "a boolean");
  if (eval && eval->contains("sample_size") && !(*eval)["sample_size"].is_null()) {
    size_t sample_size = 0;
    reader.read(eval, "eval", "sample_size", sample_size, "a nonnegative integer");
    cfg.random_sample_size = sample_size;
  }

  bool master_given = doc.contains("seed") && !doc["seed"].is_null();
  if (master_given) {
    try {
      cfg.master_seed = doc["seed"].get<std::uint64_t>();
      load.overrides.push_back("seed = " + doc["seed"].dump());
    } catch (const nlohmann::json::exception&) {
      load.errors.push_back("seed must be an unsigned integer");
      master_given = false;
    }
  }
  // Every randomness consumer derives from the master seed unless given its
  // own; no ambient entropy anywhere.
  bool random_given = eval && eval->contains("random_seed") &&
                      !(*eval)["random_seed"].is_null();
  if (random_given) {
    reader.read(eval, "eval", "random_seed", cfg.random_seed, "an unsigned integer");
  } else {
    cfg.random_seed = text::fnv1a64("random", text::fnv1a64(std::to_string(cfg.master_seed)));
  }
  cfg.embedder_seed =
      cfg.embedder.seed
          ? *cfg.embedder.seed
          : text::fnv1a64("embed", text::fnv1a64(std::to_string(cfg.master_seed)));
  if (cfg.scorer_backend.kind == "mock" && !cfg.scorer_backend.seed) {
    cfg.scorer_backend.seed =
        text::fnv1a64("scorer", text::fnv1a64(std::to_string(cfg.master_seed)));
  }
  if (cfg.generator_backend.kind == "mock" && !cfg.generator_backend.seed) {
    cfg.generator_backend.seed =
        text::fnv1a64("generator", text::fnv1a64(std::to_string(cfg.master_seed)));
  }

  // Range checks, each reported individually.
  if (cfg.min_confidence < 0.0 || cfg.min_confidence > 1.0) {
    load.errors.push_back("ingest.min_confidence must be within [0, 1]");
  }
  if (cfg.m < 1) load.errors.push_back("retrieval.m must be at least 1");
  if (cfg.query_text != "question" && cfg.query_text != "question_options") {
    load.errors.push_back(
        "retrieval.query_text must be \"question\" or \"question_options\"");
  }
  if (cfg.tau < 0.0) load.errors.push_back("diagnose.tau must be nonnegative");
  if (cfg.delta < 0.0) load.errors.push_back("diagnose.delta must be nonnegative");
  if (!(cfg.clamp > 0.0)) load.errors.push_back("diagnose.clamp must be positive");
  if (cfg.synth_retries < 0) {
    load.errors.push_back("remedy.retries must be nonnegative");
  }
  for (const auto& [tag, style] : cfg.style_map) {
    if (style != "math" && style != "reasoning") {
      load.errors.push_back("remedy.style_map." + tag +
                            " must be \"math\" or \"reasoning\"");
    }
  }
  if (cfg.tau >= 0.0) {
    for (const auto& err : diagnose::GroupTable::validate(cfg.group_rows, cfg.tau)) {
      load.errors.push_back(err);
    }
  }

  if (load.errors.empty()) load.config = std::move(cfg);
  return load;
}

ConfigLoad validate_config(const std::filesystem::path& path,
                           const CliOverrides& cli) {
  ConfigLoad load;
  std::string body;
  try {
    body = jsonl::read_file(path);
  } catch (const std::exception& e) {
    load.errors.push_back(e.what());
    return load;
  }
  auto doc = nlohmann::json::parse(body, nullptr, false);
  if (doc.is_discarded()) {
    load.errors.push_back("config is not valid JSON: " + path.string());
    return load;
  }
  // Overrides land in the document itself so seed derivation and path
  // resolution treat them exactly like config values.
  if (cli.master_seed) doc["seed"] = *cli.master_seed;
  if (cli.out_dir) {
    doc["paths"]["out_dir"] = std::filesystem::absolute(*cli.out_dir).string();
  }
  return validate_config_json(doc, path.parent_path());
}

PipelineConfig load_config(const std::filesystem::path& path) {
  auto load = validate_config(path);
  if (!load.config) {
    std::string joined;
    for (const auto& err : load.errors) {
      if (!joined.empty()) joined += "; ";
      joined += err;
    }
    throw_config(joined);
  }
  return std::move(*load.config);
}

}  // namespace kdiag::config
