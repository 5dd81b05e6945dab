#ifndef PRIU_H
#define PRIU_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call.
typedef enum PriuStatus {
  PRIU_STATUS_OK = 0,
  // A required pointer argument was null.
  PRIU_STATUS_NULL_ARGUMENT = 1,
  // Invalid hyperparameters, options or method for the model.
  PRIU_STATUS_CONFIG = 2,
  // Malformed or inconsistent data, including shape mismatches.
  PRIU_STATUS_DATA = 3,
  // Divergence or another numeric failure.
  PRIU_STATUS_NUMERIC = 4,
  PRIU_STATUS_IO = 5,
  // Unreadable cache, or a cache built from different data.
  PRIU_STATUS_CACHE = 6,
  // An output buffer has the wrong length.
  PRIU_STATUS_BUFFER_SIZE = 7,
  // A Rust panic was caught at the boundary.
  PRIU_STATUS_INTERNAL = 8,
} PriuStatus;

typedef enum PriuModelKind {
  PRIU_MODEL_KIND_LINEAR = 0,
  PRIU_MODEL_KIND_BINARY = 1,
  // Needs a class count of at least 2.
  PRIU_MODEL_KIND_MULTINOMIAL = 2,
} PriuModelKind;

typedef enum PriuCacheMode {
  PRIU_CACHE_MODE_DENSE_FULL = 0,
  PRIU_CACHE_MODE_DENSE_SVD = 1,
  PRIU_CACHE_MODE_SPARSE_LINEARIZED = 2,
} PriuCacheMode;

typedef enum PriuMethod {
  PRIU_METHOD_PRIU = 0,
  PRIU_METHOD_PRIU_OPT = 1,
  PRIU_METHOD_BASEL = 2,
  PRIU_METHOD_CLOSED_FORM = 3,
  PRIU_METHOD_INFL = 4,
} PriuMethod;

// Opaque training dataset.
typedef struct PriuDataset PriuDataset;

// Opaque dataset plus provenance cache, ready for updates.
typedef struct PriuEngine PriuEngine;

typedef struct PriuHyperparams {
  double eta;
  double lambda;
  size_t batch_size;
  size_t iterations;
  uint64_t seed;
} PriuHyperparams;

typedef struct PriuCaptureOptions {
  enum PriuCacheMode mode;
  // Relative spectral threshold for `DenseSvd`.
  double epsilon;
  // Early-stop iteration for the logistic eigen path; negative for none.
  int64_t t_s;
} PriuCaptureOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. The pointer
// stays valid until the next failing call on the same thread.
const char *priu_last_error(void);

// Library version as a static NUL-terminated string.
const char *priu_version(void);

// Dense row-major `n x m` features and `n` labels. Binary labels are ±1;
// multinomial labels are class indices stored as doubles.
//
// # Safety
// `x` must point to `n * m` doubles, `y` to `n` doubles and `out` to
// writable storage for one handle.
enum PriuStatus priu_dataset_from_dense(const double *x,
                                        size_t n,
                                        size_t m,
                                        const double *y,
                                        enum PriuModelKind kind,
                                        uint32_t classes,
                                        struct PriuDataset **out);

// Reads a CSV (label in the last column, no header) or LIBSVM file; the
// format follows the extension.
//
// # Safety
// `path` must be a NUL-terminated string and `out` writable.
enum PriuStatus priu_dataset_load(const char *path,
                                  enum PriuModelKind kind,
                                  uint32_t classes,
                                  struct PriuDataset **out);

// # Safety
// `ds` must be null or a handle from this library not yet freed.
void priu_dataset_free(struct PriuDataset *ds);

// Number of rows, or 0 for a null handle.
//
// # Safety
// `ds` must be null or a live handle.
size_t priu_dataset_rows(const struct PriuDataset *ds);

// Number of feature columns, or 0 for a null handle.
//
// # Safety
// `ds` must be null or a live handle.
size_t priu_dataset_cols(const struct PriuDataset *ds);

// Trains on a copy of `ds` and captures the provenance cache. `opts` may
// be null for a dense-full cache.
//
// # Safety
// `ds` and `hp` must be live, `opts` null or valid, `out` writable.
enum PriuStatus priu_engine_train(const struct PriuDataset *ds,
                                  const struct PriuHyperparams *hp,
                                  const struct PriuCaptureOptions *opts,
                                  struct PriuEngine **out);

// Pairs a copy of `ds` with a cache file written by `priu_engine_save` or
// the command line tool.
//
// # Safety
// `ds` live, `path` NUL-terminated, `out` writable.
enum PriuStatus priu_engine_load(const struct PriuDataset *ds,
                                 const char *path,
                                 struct PriuEngine **out);

// # Safety
// `engine` live, `path` NUL-terminated.
enum PriuStatus priu_engine_save(const struct PriuEngine *engine, const char *path);

// # Safety
// `engine` must be null or a handle from this library not yet freed.
void priu_engine_free(struct PriuEngine *engine);

// Length of the parameter vector (`m`, or `q * m` for multinomial
// models), or 0 for a null handle.
//
// # Safety
// `engine` must be null or a live handle.
size_t priu_engine_param_dim(const struct PriuEngine *engine);

// Copies the trained parameters into `w_out` (exactly `len` values).
//
// # Safety
// `engine` live, `w_out` writable for `len` doubles.
enum PriuStatus priu_engine_trained(const struct PriuEngine *engine, double *w_out, size_t len);

// Removes the rows in `removed` (duplicates ignored) and writes the
// updated parameters. `update_ms` may be null.
//
// # Safety
// `engine` live, `removed` readable for `count` values (or null when
// `count` is 0), `w_out` writable for `len` doubles.
enum PriuStatus priu_engine_update(const struct PriuEngine *engine,
                                   enum PriuMethod method,
                                   const uint32_t *removed,
                                   size_t count,
                                   double *w_out,
                                   size_t len,
                                   double *update_ms);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PRIU_H */
