/* Copyright 2026 kdiag authors */
/* SPDX-License-Identifier: Apache-2.0 */

/* C interface to the knowledge-deficiency diagnosis pipeline.
 *
 * All functions are thread-safe, but one pipeline handle must not be used
 * from two threads at once. Error messages are per-thread: when a call
 * returns anything but KDIAG_OK, kdiag_last_error() on the same thread
 * holds the human-readable reason until the next failing call.
 */

#ifndef KDIAG_H
#define KDIAG_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define KDIAG_API __declspec(dllexport)
#else
#define KDIAG_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum kdiag_status {
  KDIAG_OK = 0,
  KDIAG_ERR_CONFIG = 1,  /* invalid configuration or arguments */
  KDIAG_ERR_BACKEND = 2, /* model backend (mock/http) failure */
  KDIAG_ERR_STATE = 3,   /* wrong order of operations, lock conflicts */
  KDIAG_ERR_IO = 4,      /* filesystem failure */
  KDIAG_ERR_INVALID = 5, /* invalid input data */
} kdiag_status;

/* Opaque pipeline handle bound to one config file and output directory. */
typedef struct kdiag_pipeline kdiag_pipeline;

KDIAG_API const char* kdiag_version(void);
KDIAG_API const char* kdiag_status_name(kdiag_status status);

/* Message for this thread's most recent failing call; empty, never NULL. */
KDIAG_API const char* kdiag_last_error(void);

/* KL(P||Q) = sum_i p[i] * (ln p[i] - ln q[i]), natural log, inputs clamped
 * to >= clamp before the logs (pass 0 for the default 1e-12). Fails with
 * KDIAG_ERR_INVALID unless p and q are same-length distributions of at
 * least two options. */
KDIAG_API kdiag_status kdiag_relative_entropy(const double* p, const double* q,
                                              size_t n, double clamp,
                                              double* out);

typedef struct kdiag_open_options {
  const char* out_dir; /* overrides paths.out_dir when non-NULL */
  int resume;          /* nonzero: skip stages whose recorded inputs match */
  int has_seed;        /* nonzero: seed replaces the config master seed */
  uint64_t seed;
} kdiag_open_options;

/* Validates the config, applies the options, and locks the output
 * directory. On KDIAG_ERR_CONFIG, kdiag_last_error() lists every
 * validation problem, one per line. options may be NULL (resume on). */
KDIAG_API kdiag_status kdiag_open(const char* config_path,
                                  const kdiag_open_options* options,
                                  kdiag_pipeline** out);

/* Fixed stage order executed by kdiag_run_all. */
KDIAG_API size_t kdiag_stage_count(void);
KDIAG_API const char* kdiag_stage_name_at(size_t index); /* NULL out of range */

/* Runs one stage (see kdiag_stage_name_at). *executed (optional) becomes 1
 * when the stage ran and 0 when unchanged inputs let it skip. */
KDIAG_API kdiag_status kdiag_run_stage(kdiag_pipeline* pipeline,
                                       const char* stage, int* executed);

/* All stages in order; stops at the first failure. */
KDIAG_API kdiag_status kdiag_run_all(kdiag_pipeline* pipeline);

/* Newline-joined "key = value" lines for every non-default config setting.
 * Owned by the handle; valid until kdiag_close. */
KDIAG_API const char* kdiag_config_echo(const kdiag_pipeline* pipeline);

/* Newline-joined artifact names written (or verified) by the most recent
 * kdiag_run_stage/kdiag_run_all call. Owned by the handle. */
KDIAG_API const char* kdiag_last_outputs(const kdiag_pipeline* pipeline);

/* Absolute output directory the handle is locked to. Owned by the handle. */
KDIAG_API const char* kdiag_out_dir(const kdiag_pipeline* pipeline);

/* Releases the lock and the handle. NULL is a no-op. */
KDIAG_API void kdiag_close(kdiag_pipeline* pipeline);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* KDIAG_H */
