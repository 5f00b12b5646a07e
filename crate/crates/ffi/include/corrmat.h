#ifndef CORRMAT_H
#define CORRMAT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CorrmatStatus {
  CORRMAT_STATUS_OK = 0,
  CORRMAT_STATUS_NULL_POINTER = 1,
  CORRMAT_STATUS_INVALID_UTF8 = 2,
  CORRMAT_STATUS_PARSE = 3,
  CORRMAT_STATUS_INVALID_KERNEL = 4,
  CORRMAT_STATUS_BAD_THETA = 5,
  CORRMAT_STATUS_NOT_SYMMETRIC = 6,
  CORRMAT_STATUS_NOT_CONVERGED = 7,
  CORRMAT_STATUS_OUT_OF_RANGE = 8,
  CORRMAT_STATUS_FAILURE_BUDGET = 9,
  CORRMAT_STATUS_RUN = 10,
  CORRMAT_STATUS_PANIC = 11,
} CorrmatStatus;

// A parsed covariance kernel.
typedef struct CorrmatKernel CorrmatKernel;

// A finished Monte Carlo run.
typedef struct CorrmatRun CorrmatRun;

typedef struct CorrmatValidity {
  size_t embed_size;
  double min_spectral;
  double max_spectral;
  double tol_psd;
  size_t negative_modes;
  bool valid;
} CorrmatValidity;

typedef struct CorrmatPrediction {
  double center;
  double alpha;
  double sigma2;
  bool degenerate;
  double exact_var_quad;
  double exact_mean_w2;
} CorrmatPrediction;

typedef struct CorrmatRecord {
  size_t n;
  uint64_t rep_index;
  uint64_t seed;
  double lambda1;
  double centered;
  double quad_w;
  double quad_w2;
  double op_norm;
  double term1;
  double term2;
  double remainder;
  size_t eig_iterations;
  bool failed;
} CorrmatRecord;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread. Empty after a success.
// The pointer stays valid until the next `corrmat_*` call on the same thread.
const char *corrmat_last_error(void);

// Library version as a static NUL-terminated string.
const char *corrmat_version(void);

// Parses a kernel from its JSON form (`ma`, `explicit` or `wigner`).
//
// # Safety
// `json` must be a NUL-terminated string and `out` a writable pointer.
enum CorrmatStatus corrmat_kernel_from_json(const char *json, struct CorrmatKernel **out);

// # Safety
// `kernel` must come from [`corrmat_kernel_from_json`] and not be freed twice. Null is a no-op.
void corrmat_kernel_free(struct CorrmatKernel *kernel);

// Checks the kernel on a torus of side `embed_size` (0 picks the default).
//
// # Safety
// `kernel` must be a live handle and `out` writable.
enum CorrmatStatus corrmat_kernel_validate(const struct CorrmatKernel *kernel,
                                           size_t embed_size,
                                           struct CorrmatValidity *out);

// Limiting law and exact finite-`n` moments.
//
// # Safety
// `kernel` must be a live handle and `out` writable.
enum CorrmatStatus corrmat_predict(const struct CorrmatKernel *kernel,
                                   double theta,
                                   size_t n,
                                   struct CorrmatPrediction *out);

// Largest eigenvalue of the symmetric `n x n` row-major matrix at `data`.
//
// `tol <= 0` uses the default tolerance. `seed` fixes the Lanczos start vector.
// `out_vector` may be null; otherwise it receives the unit eigenvector (`n` values).
//
// # Safety
// `data` must hold `n * n` doubles, `out_lambda` must be writable and a
// non-null `out_vector` must have room for `n` doubles.
enum CorrmatStatus corrmat_largest_eigenvalue(const double *data,
                                              size_t n,
                                              double tol,
                                              uint64_t seed,
                                              double *out_lambda,
                                              double *out_vector);

// Operator norm of the symmetric `n x n` row-major matrix at `data`.
//
// # Safety
// `data` must hold `n * n` doubles and `out_norm` must be writable.
enum CorrmatStatus corrmat_operator_norm(const double *data,
                                         size_t n,
                                         double tol,
                                         uint64_t seed,
                                         double *out_norm);

// Runs the experiment described by a JSON run config.
// `threads = 0` uses the default worker pool.
//
// # Safety
// `json` must be a NUL-terminated string and `out` writable.
enum CorrmatStatus corrmat_run_from_json(const char *json, size_t threads, struct CorrmatRun **out);

// # Safety
// `run` must be a live handle or null (returns 0).
size_t corrmat_run_record_count(const struct CorrmatRun *run);

// Copies record `index` (in size-then-replication order) into `out`.
//
// # Safety
// `run` must be a live handle and `out` writable.
enum CorrmatStatus corrmat_run_record(const struct CorrmatRun *run,
                                      size_t index,
                                      struct CorrmatRecord *out);

// Whether every verdict of the run passed. False for a null handle.
//
// # Safety
// `run` must be a live handle or null.
bool corrmat_run_all_passed(const struct CorrmatRun *run);

// Summary as JSON. Owned by `run`; valid until [`corrmat_run_free`]. Null for a null handle.
//
// # Safety
// `run` must be a live handle or null.
const char *corrmat_run_summary_json(const struct CorrmatRun *run);

// # Safety
// `run` must come from [`corrmat_run_from_json`] and not be freed twice. Null is a no-op.
void corrmat_run_free(struct CorrmatRun *run);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CORRMAT_H */
