// Copyright 2026 kdiag authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "kdiag/diagnose.hpp"

namespace kdiag::config {

// Model-backend settings; "mock" runs offline, "http" talks to a server.
struct BackendConfig {
  std::string kind = "mock";
  std::string endpoint;
  std::string model;
  std::string auth_env;
  int timeout_ms = 30000;
  int retries = 3;
  int backoff_ms = 250;
  size_t in_flight = 1;
  std::optional<std::uint64_t> seed;  // mock only
  nlohmann::json script;              // mock only; inline or loaded from script_path
};

struct EmbedderConfig {
  std::string kind = "stub";  // "stub" | "http"
  std::string endpoint;
  std::string model;
  std::string auth_env;
  int timeout_ms = 30000;
  int retries = 3;
  int backoff_ms = 250;
  size_t in_flight = 1;
  std::optional<std::uint64_t> seed;  // stub only
  size_t dim = 64;                    // stub only
};

// Fully resolved pipeline settings with every default applied.
struct PipelineConfig {
  // Paths resolve relative to the config file's directory.
  std::filesystem::path facts_path;
  std::filesystem::path queries_path;
  std::filesystem::path math_queries_path;  // optional input
  std::filesystem::path templates_dir;
  std::filesystem::path cache_dir;
  std::filesystem::path out_dir;

  double min_confidence = 0.7;
  size_t m = 4;
  double tau = 0.1;
  std::vector<diagnose::GroupRow> group_rows;  // defaults to the severity table
  double delta = 1e-6;
  double clamp = 1e-12;
  bool diagnose_length_normalize = false;
  std::string template_id = "plain";
  std::string query_text = "question";  // or "question_options"

  std::map<std::string, std::string> style_map = {{"gsm8k", "math"},
                                                  {"math", "math"}};
  std::optional<long long> expected_total;
  int synth_retries = 1;

  bool perplexity_length_normalize = true;
  bool flag_unparseable = true;
  std::optional<size_t> random_sample_size;  // defaults to |truth| at run time

  std::uint64_t master_seed = 0;
  std::uint64_t random_seed = 0;    // derived from master unless set
  std::uint64_t embedder_seed = 0;  // effective stub seed

  BackendConfig scorer_backend;
  BackendConfig generator_backend;
  EmbedderConfig embedder;

  diagnose::GroupTable table() const { return {group_rows, tau}; }
};

struct ConfigLoad {
  std::optional<PipelineConfig> config;  // present iff errors is empty
  std::vector<std::string> errors;       // every violation, one entry each
  std::vector<std::string> overrides;    // echo of non-default settings
};

// Command-line settings that take precedence over the config document.
// master_seed replaces the document's seed before derivation, so every
// derived seed follows it.
struct CliOverrides {
  std::optional<std::filesystem::path> out_dir;  // resolved against the CWD
  std::optional<std::uint64_t> master_seed;
};

// Collects all validation errors in one pass instead of stopping at the
// first; an empty document yields pure defaults.
ConfigLoad validate_config(const std::filesystem::path& path,
                           const CliOverrides& cli = {});
ConfigLoad validate_config_json(const nlohmann::json& doc,
                                const std::filesystem::path& base_dir);

// validate_config that throws a Config error listing every violation.
PipelineConfig load_config(const std::filesystem::path& path);

}  // namespace kdiag::config
