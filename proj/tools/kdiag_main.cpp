// Copyright 2026 kdiag authors
// SPDX-License-Identifier: Apache-2.0

// Command-line front end. Links only the shared C API so it exercises the
// same surface any other binding would.

#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "kdiag.h"

namespace {

// 0 success, 1 validation/config/state, 2 backend failure.
int exit_code_for(kdiag_status status) {
  if (status == KDIAG_OK) return 0;
  return status == KDIAG_ERR_BACKEND ? 2 : 1;
}

int report_failure(kdiag_status status) {
  std::fprintf(stderr, "error (%s):\n%s\n", kdiag_status_name(status),
               kdiag_last_error());
  return exit_code_for(status);
}

std::string comma_joined(const char* newline_joined) {
  std::string out;
  for (const char* c = newline_joined ? newline_joined : ""; *c; ++c) {
    if (*c == '\n') {
      out += ", ";
    } else {
      out += *c;
    }
  }
  return out;
}

int run_one(kdiag_pipeline* pipeline, const std::string& stage) {
  int executed = 0;
  kdiag_status status = kdiag_run_stage(pipeline, stage.c_str(), &executed);
  if (status != KDIAG_OK) return report_failure(status);
  std::printf("[%s] %s -> %s\n", stage.c_str(),
              executed ? "ran" : "skipped (inputs unchanged)",
              comma_joined(kdiag_last_outputs(pipeline)).c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Diagnose knowledge deficiencies via relative entropy and plan "
               "curriculum-ordered remediation data"};
  app.set_version_flag("--version", kdiag_version());
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  bool resume = true;
  std::uint64_t seed = 0;

  app.add_option("--config", config_path, "Pipeline config file (JSON)")
      ->required();
  app.add_option("--out-dir", out_dir, "Override the config's output directory");
  app.add_flag("--resume,!--no-resume", resume,
               "Skip stages whose recorded inputs are unchanged (default: on)");
  auto* seed_opt =
      app.add_option("--seed", seed, "Override the config's master seed");

  std::string chosen;
  for (size_t i = 0; i < kdiag_stage_count(); ++i) {
    const std::string name = kdiag_stage_name_at(i);
    auto* sub = app.add_subcommand(name, "Run the " + name + " stage");
    sub->fallthrough();  // accept --config etc. after the stage name
    sub->callback([&chosen, name] { chosen = name; });
  }
  auto* run_all = app.add_subcommand("run-all", "Run every stage in order");
  run_all->fallthrough();
  run_all->callback([&chosen] { chosen = "run-all"; });

  CLI11_PARSE(app, argc, argv);

  kdiag_open_options options{};
  options.out_dir = out_dir.empty() ? nullptr : out_dir.c_str();
  options.resume = resume ? 1 : 0;
  options.has_seed = seed_opt->count() > 0 ? 1 : 0;
  options.seed = seed;

  kdiag_pipeline* pipeline = nullptr;
  kdiag_status status = kdiag_open(config_path.c_str(), &options, &pipeline);
  if (status != KDIAG_OK) return report_failure(status);

  const char* echo = kdiag_config_echo(pipeline);
  if (echo && *echo) std::printf("config overrides:\n%s\n", echo);
  std::printf("output directory: %s\n", kdiag_out_dir(pipeline));

  int rc = 0;
  if (chosen == "run-all") {
    for (size_t i = 0; i < kdiag_stage_count() && rc == 0; ++i) {
      rc = run_one(pipeline, kdiag_stage_name_at(i));
    }
  } else {
    rc = run_one(pipeline, chosen);
  }

  kdiag_close(pipeline);
  return rc;
}
