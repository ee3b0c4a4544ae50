// Copyright 2026 kdiag authors
// SPDX-License-Identifier: Apache-2.0

#include "kdiag.h"

#include <memory>
#include <string>

#include "kdiag/config.hpp"
#include "kdiag/diagnose.hpp"
#include "kdiag/errors.hpp"
#include "kdiag/pipeline.hpp"
#include "kdiag/version.hpp"

struct kdiag_pipeline {
  std::unique_ptr<kdiag::pipeline::Pipeline> impl;
  std::string echo;          // override echo captured at open
  std::string last_outputs;  // artifacts from the latest run call
  std::string out_dir;
};

namespace {

thread_local std::string g_last_error;

kdiag_status status_for(kdiag::ErrorKind kind) {
  switch (kind) {
    case kdiag::ErrorKind::Config:
      return KDIAG_ERR_CONFIG;
    case kdiag::ErrorKind::Backend:
      return KDIAG_ERR_BACKEND;
    case kdiag::ErrorKind::Io:
      return KDIAG_ERR_IO;
    case kdiag::ErrorKind::Invalid:
      return KDIAG_ERR_INVALID;
    case kdiag::ErrorKind::State:
      return KDIAG_ERR_STATE;
  }
  return KDIAG_ERR_STATE;
}

kdiag_status fail(kdiag_status status, std::string message) {
  g_last_error = std::move(message);
  return status;
}

// Runs fn, translating C++ exceptions into status codes + last_error.
template <typename Fn>
kdiag_status guarded(Fn&& fn) {
  try {
    fn();
    g_last_error.clear();
    return KDIAG_OK;
  } catch (const kdiag::Error& e) {
    return fail(status_for(e.kind()), e.what());
  } catch (const std::exception& e) {
    return fail(KDIAG_ERR_STATE, e.what());
  }
}

std::string join_lines(const std::vector<std::string>& lines) {
  std::string out;
  for (const auto& line : lines) {
    if (!out.empty()) out += '\n';
    out += line;
  }
  return out;
}

}  // namespace

extern "C" {

const char* kdiag_version(void) { return kdiag::kVersion; }

const char* kdiag_status_name(kdiag_status status) {
  switch (status) {
    case KDIAG_OK:
      return "ok";
    case KDIAG_ERR_CONFIG:
      return "config error";
    case KDIAG_ERR_BACKEND:
      return "backend error";
    case KDIAG_ERR_STATE:
      return "state error";
    case KDIAG_ERR_IO:
      return "io error";
    case KDIAG_ERR_INVALID:
      return "invalid input";
  }
  return "unknown status";
}

const char* kdiag_last_error(void) { return g_last_error.c_str(); }

kdiag_status kdiag_relative_entropy(const double* p, const double* q, size_t n,
                                    double clamp, double* out) {
  if (!p || !q || !out) {
    return fail(KDIAG_ERR_INVALID, "relative entropy needs p, q, and out");
  }
  if (n < 2) {
    return fail(KDIAG_ERR_INVALID, "distributions need at least two options");
  }
  return guarded([&] {
    std::vector<double> pv(p, p + n), qv(q, q + n);
    *out = kdiag::diagnose::relative_entropy(pv, qv, clamp > 0 ? clamp : 1e-12);
  });
}

kdiag_status kdiag_open(const char* config_path,
                        const kdiag_open_options* options,
                        kdiag_pipeline** out) {
  if (!config_path || !out) {
    return fail(KDIAG_ERR_INVALID, "kdiag_open needs a config path and out handle");
  }
  *out = nullptr;
  return guarded([&] {
    kdiag::config::CliOverrides cli;
    if (options && options->out_dir) cli.out_dir = options->out_dir;
    if (options && options->has_seed) cli.master_seed = options->seed;
    auto load = kdiag::config::validate_config(config_path, cli);
    if (!load.config) kdiag::throw_config(join_lines(load.errors));

    auto handle = std::make_unique<kdiag_pipeline>();
    handle->impl =
        std::make_unique<kdiag::pipeline::Pipeline>(std::move(*load.config));
    handle->impl->set_resume(options ? options->resume != 0 : true);
    handle->echo = join_lines(load.overrides);
    handle->out_dir = handle->impl->cfg().out_dir.string();
    *out = handle.release();
  });
}

size_t kdiag_stage_count(void) {
  return kdiag::pipeline::stage_names().size();
}

const char* kdiag_stage_name_at(size_t index) {
  const auto& names = kdiag::pipeline::stage_names();
  return index < names.size() ? names[index].c_str() : nullptr;
}

kdiag_status kdiag_run_stage(kdiag_pipeline* pipeline, const char* stage,
                             int* executed) {
  if (!pipeline || !stage) {
    return fail(KDIAG_ERR_INVALID, "kdiag_run_stage needs a handle and stage name");
  }
  return guarded([&] {
    auto outcome = pipeline->impl->run_stage(stage);
    if (executed) *executed = outcome.executed ? 1 : 0;
    pipeline->last_outputs = join_lines(outcome.outputs);
  });
}

kdiag_status kdiag_run_all(kdiag_pipeline* pipeline) {
  if (!pipeline) return fail(KDIAG_ERR_INVALID, "kdiag_run_all needs a handle");
  return guarded([&] {
    auto outcomes = pipeline->impl->run_all();
    std::vector<std::string> outputs;
    for (const auto& outcome : outcomes) {
      for (const auto& name : outcome.outputs) outputs.push_back(name);
    }
    pipeline->last_outputs = join_lines(outputs);
  });
}

const char* kdiag_config_echo(const kdiag_pipeline* pipeline) {
  return pipeline ? pipeline->echo.c_str() : "";
}

const char* kdiag_last_outputs(const kdiag_pipeline* pipeline) {
  return pipeline ? pipeline->last_outputs.c_str() : "";
}

const char* kdiag_out_dir(const kdiag_pipeline* pipeline) {
  return pipeline ? pipeline->out_dir.c_str() : "";
}

void kdiag_close(kdiag_pipeline* pipeline) { delete pipeline; }

}  // extern "C"
